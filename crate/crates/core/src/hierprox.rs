//! Closed-form hierarchical group-sparse proximal operator.
//!
//! Solves
//!
//! ```text
//! min_{b, W_1..W_L}  1/2 ||v - b||^2 + lambda ||b||_2
//!                    + sum_l ( 1/2 ||U_l - W_l||^2 + lambda_bar ||W_l||_1 )
//! s.t.               ||W_l||_inf <= tau ||b||_2   for every l
//! ```
//!
//! `v` holds the linear (residual) weights of one input variable and each
//! `U_l` one row of network input weights for the same variable. The
//! minimizer is parameterised by a vector `s` counting, per block, how many
//! coordinates sit on the `tau ||b||` boundary:
//!
//! ```text
//! a_s = lambda + lambda_bar tau sum_l s_l - tau sum_l sum_{j <= s_l} |U_l|_(j)
//! b   = max(1 - a_s / ||v||, 0) v / (1 + tau^2 sum_l s_l)
//! W_l = sign(U_l) min(tau ||b||, S_lambda_bar(|U_l|))
//! ```
//!
//! The W misfit carries the 1/2 factor throughout; with it the closed forms
//! above are exact minimizers. [`objective`] evaluates the same convention.
//!
//! `s` is found by sweeping `t = tau ||b||` down through the sorted
//! thresholds `S_lambda_bar(|U_lj|)`: each segment fixes `s`, and a segment
//! is a candidate when the `b(s)` it induces lands back inside it.

use serde::{Deserialize, Serialize};

/// Relative slack for interval membership tests.
const BOUNDARY_SLACK: f64 = 1e-12;

/// Inputs of one proximal step for a single input variable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HierProxProblem {
    pub v: Vec<f64>,
    pub u: Vec<Vec<f64>>,
    pub lambda: f64,
    pub lambda_bar: f64,
    pub tau: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HierProxSolution {
    pub b: Vec<f64>,
    pub w: Vec<Vec<f64>>,
    pub s: Vec<usize>,
    pub a_s: f64,
}

/// How [`prox_with`] enumerates candidate `s` vectors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Enumeration {
    /// Threshold sweep, `O(LK log LK)`.
    Sweep,
    /// Every `s` in `{0..K}^L`. Exponential; for small problems and tests.
    ProductGrid,
}

impl HierProxProblem {
    pub fn new(v: Vec<f64>, u: Vec<Vec<f64>>, lambda: f64, lambda_bar: f64, tau: f64) -> Self {
        let p = HierProxProblem {
            v,
            u,
            lambda,
            lambda_bar,
            tau,
        };
        p.check();
        p
    }

    pub fn n_blocks(&self) -> usize {
        self.u.len()
    }

    pub fn block_len(&self) -> usize {
        self.u.first().map_or(0, Vec::len)
    }

    fn check(&self) {
        debug_assert!(!self.u.is_empty(), "at least one weight block is required");
        debug_assert!(
            self.u.iter().all(|r| r.len() == self.block_len()),
            "weight blocks must share a length"
        );
        debug_assert!(self.lambda >= 0.0 && self.lambda_bar >= 0.0 && self.tau >= 0.0);
    }
}

pub fn soft_threshold(x: f64, lam: f64) -> f64 {
    x.signum() * (x.abs() - lam).max(0.0)
}

fn norm2(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Per block: magnitudes sorted descending.
fn sorted_magnitudes(p: &HierProxProblem) -> Vec<Vec<f64>> {
    p.u.iter()
        .map(|row| {
            let mut m: Vec<f64> = row.iter().map(|x| x.abs()).collect();
            m.sort_by(|a, b| b.total_cmp(a));
            m
        })
        .collect()
}

fn a_s_sorted(p: &HierProxProblem, sorted: &[Vec<f64>], s: &[usize]) -> f64 {
    let total: usize = s.iter().sum();
    let top: f64 = sorted.iter().zip(s).map(|(m, &sl)| m[..sl].iter().sum::<f64>()).sum();
    p.lambda + p.lambda_bar * p.tau * total as f64 - p.tau * top
}

pub fn a_s(problem: &HierProxProblem, s: &[usize]) -> f64 {
    a_s_sorted(problem, &sorted_magnitudes(problem), s)
}

fn b_for(p: &HierProxProblem, a: f64, total_s: usize) -> Vec<f64> {
    let nv = norm2(&p.v);
    if nv == 0.0 {
        return vec![0.0; p.v.len()];
    }
    let shrink = (1.0 - a / nv).max(0.0) / (1.0 + p.tau * p.tau * total_s as f64);
    p.v.iter().map(|x| shrink * x).collect()
}

fn w_for(p: &HierProxProblem, b_norm: f64) -> Vec<Vec<f64>> {
    let cap = p.tau * b_norm;
    p.u.iter()
        .map(|row| {
            row.iter()
                .map(|&x| x.signum() * cap.min(soft_threshold(x.abs(), p.lambda_bar)))
                .map(|x| if x == 0.0 { 0.0 } else { x })
                .collect()
        })
        .collect()
}

/// Closed-form `(b, W)` for a fixed `s`.
pub fn solve_for_s(problem: &HierProxProblem, s: &[usize]) -> HierProxSolution {
    let sorted = sorted_magnitudes(problem);
    let a = a_s_sorted(problem, &sorted, s);
    let b = b_for(problem, a, s.iter().sum());
    let w = w_for(problem, norm2(&b));
    HierProxSolution {
        b,
        w,
        s: s.to_vec(),
        a_s: a,
    }
}

/// Objective value, with the 1/2 factor on every squared misfit.
pub fn objective(problem: &HierProxProblem, b: &[f64], w: &[Vec<f64>]) -> f64 {
    let fit_b: f64 = problem.v.iter().zip(b).map(|(v, b)| (v - b).powi(2)).sum();
    let mut total = 0.5 * fit_b + problem.lambda * norm2(b);
    for (u, w) in problem.u.iter().zip(w) {
        let fit: f64 = u.iter().zip(w).map(|(u, w)| (u - w).powi(2)).sum();
        let l1: f64 = w.iter().map(|x| x.abs()).sum();
        total += 0.5 * fit + problem.lambda_bar * l1;
    }
    total
}

/// Whether `tau ||b||` lies in every block's interval for `s`.
pub fn satisfies_intervals(problem: &HierProxProblem, s: &[usize], b_norm: f64) -> bool {
    let sorted = sorted_magnitudes(problem);
    intervals_hold(problem, &sorted, s, b_norm)
}

fn intervals_hold(p: &HierProxProblem, sorted: &[Vec<f64>], s: &[usize], b_norm: f64) -> bool {
    let t = p.tau * b_norm;
    sorted.iter().zip(s).all(|(m, &sl)| {
        let k = m.len();
        let lo = if sl >= k { 0.0 } else { soft_threshold(m[sl], p.lambda_bar) };
        let slack = BOUNDARY_SLACK * lo.max(t).max(1.0);
        if t < lo - slack {
            return false;
        }
        if sl == 0 {
            return true;
        }
        let hi = soft_threshold(m[sl - 1], p.lambda_bar);
        hi > 0.0 && t < hi + slack
    })
}

/// Global minimizer, found with the threshold sweep.
pub fn prox(problem: &HierProxProblem) -> HierProxSolution {
    prox_with(problem, Enumeration::Sweep)
}

pub fn prox_with(problem: &HierProxProblem, how: Enumeration) -> HierProxSolution {
    problem.check();
    let sorted = sorted_magnitudes(problem);
    let candidates = match how {
        Enumeration::Sweep => sweep_segments(problem, &sorted),
        Enumeration::ProductGrid => product_grid(problem.n_blocks(), problem.block_len()),
    };
    let consistent: Vec<&Vec<usize>> = candidates
        .iter()
        .filter(|s| {
            let a = a_s_sorted(problem, &sorted, s);
            let b = b_for(problem, a, s.iter().sum());
            intervals_hold(problem, &sorted, s, norm2(&b))
        })
        .collect();
    if consistent.is_empty() {
        log::debug!("hierprox: no interval-consistent s, falling back to objective search");
        let fallback = sweep_segments(problem, &sorted);
        best_of(problem, fallback.iter())
    } else {
        best_of(problem, consistent.into_iter())
    }
}

fn best_of<'a>(problem: &HierProxProblem, cands: impl Iterator<Item = &'a Vec<usize>>) -> HierProxSolution {
    let mut best: Option<(f64, HierProxSolution)> = None;
    for s in cands {
        let sol = solve_for_s(problem, s);
        let obj = objective(problem, &sol.b, &sol.w);
        let better = match &best {
            None => true,
            Some((bo, bs)) => {
                let tol = 1e-12 * bo.abs().max(1.0);
                if obj < bo - tol {
                    true
                } else if obj <= bo + tol {
                    let (ts, tb) = (sol.s.iter().sum::<usize>(), bs.s.iter().sum::<usize>());
                    ts < tb || (ts == tb && sol.s < bs.s)
                } else {
                    false
                }
            }
        };
        if better {
            best = Some((obj, sol));
        }
    }
    best.expect("candidate list is never empty").1
}

/// The `s` vector of every segment of `t = tau ||b||` between consecutive
/// distinct thresholds, from `t = inf` (all zeros) down to `t = 0`.
fn sweep_segments(p: &HierProxProblem, sorted: &[Vec<f64>]) -> Vec<Vec<usize>> {
    let mut events: Vec<(f64, usize)> = Vec::new();
    for (l, m) in sorted.iter().enumerate() {
        for &x in m {
            let th = soft_threshold(x, p.lambda_bar);
            if th > 0.0 {
                events.push((th, l));
            }
        }
    }
    events.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut s = vec![0usize; sorted.len()];
    let mut out = vec![s.clone()];
    let mut i = 0;
    while i < events.len() {
        let level = events[i].0;
        while i < events.len() && events[i].0 == level {
            s[events[i].1] += 1;
            i += 1;
        }
        out.push(s.clone());
    }
    out
}

fn product_grid(l: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut s = vec![0usize; l];
    loop {
        out.push(s.clone());
        let mut i = 0;
        loop {
            if i == l {
                return out;
            }
            if s[i] < k {
                s[i] += 1;
                break;
            }
            s[i] = 0;
            i += 1;
        }
    }
}
