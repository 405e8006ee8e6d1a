//! Bidirectional LSTM sequence regressor with a linear residual connection.
//!
//! For the `j`-th sample of a person with input row `x_j` (genes, plus the
//! encoded ZT pair when augmented):
//!
//! ```text
//! o_j  = h_fwd_j W_fo + h_bwd_j W_bo + b_o
//! pred = o_j theta + x_j beta + beta0
//! ```
//!
//! Each direction runs a standard LSTM cell with zero initial state. Gate
//! columns are stored side by side in `[input | forget | candidate | output]`
//! order, so row `k` of `w_in` holds every weight that touches input `k`.

use nalgebra::{DMatrix, RowDVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::circular_time::CircTime;
use crate::data::{NormalizedCohort, PersonRecord};

pub type Mat = DMatrix<f64>;

pub const N_GATES: usize = 4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("dimension mismatch: expected {expected} input columns, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("malformed weight block {name}: {msg}")]
    MalformedBlock { name: String, msg: String },
}

/// One LSTM direction.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmCell {
    /// `D x 4H` input weights.
    pub w_in: Mat,
    /// `H x 4H` recurrent weights.
    pub w_rec: Mat,
    /// `1 x 4H` input-side biases.
    pub b_in: Mat,
    /// `1 x 4H` recurrent-side biases.
    pub b_rec: Mat,
}

impl LstmCell {
    fn zeros(d: usize, h: usize) -> Self {
        LstmCell {
            w_in: Mat::zeros(d, N_GATES * h),
            w_rec: Mat::zeros(h, N_GATES * h),
            b_in: Mat::zeros(1, N_GATES * h),
            b_rec: Mat::zeros(1, N_GATES * h),
        }
    }

    pub fn hidden(&self) -> usize {
        self.w_rec.nrows()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "ModelRepr", try_from = "ModelRepr")]
pub struct BiLstmModel {
    pub forward: LstmCell,
    pub backward: LstmCell,
    /// `H x P`
    pub w_fo: Mat,
    /// `H x P`
    pub w_bo: Mat,
    /// `1 x P`
    pub b_o: Mat,
    /// `P x 2`
    pub theta: Mat,
    /// `D x 2`
    pub beta: Mat,
    /// `1 x 2`
    pub beta0: Mat,
}

/// One person's inputs (`N x D`) and, when known, encoded targets (`N x 2`).
#[derive(Debug, Clone, PartialEq)]
pub struct Sequence {
    pub inputs: Mat,
    pub targets: Option<Mat>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SequenceBatch {
    pub sequences: Vec<Sequence>,
}

impl SequenceBatch {
    pub fn n_samples(&self) -> usize {
        self.sequences.iter().map(|s| s.inputs.nrows()).sum()
    }

    pub fn n_labelled(&self) -> usize {
        self.sequences
            .iter()
            .filter(|s| s.targets.is_some())
            .map(|s| s.inputs.nrows())
            .sum()
    }

    /// Build the design for every person in a normalized cohort.
    pub fn from_cohort(cohort: &NormalizedCohort, zt_augmented: bool) -> Self {
        SequenceBatch {
            sequences: cohort
                .people
                .iter()
                .map(|p| person_sequence(p, zt_augmented))
                .collect(),
        }
    }
}

/// Input row for a sample: expression values, then `(sin, cos)` of ZT if augmented.
pub fn input_row(expression: &[f64], zt: CircTime, zt_augmented: bool) -> Vec<f64> {
    let mut row = expression.to_vec();
    if zt_augmented {
        let p = zt.encode();
        row.push(p.t1);
        row.push(p.t2);
    }
    row
}

pub fn person_sequence(person: &PersonRecord, zt_augmented: bool) -> Sequence {
    let n = person.samples.len();
    let d = person.samples.first().map_or(0, |s| s.expression.len()) + if zt_augmented { 2 } else { 0 };
    let mut inputs = Mat::zeros(n, d);
    for (j, s) in person.samples.iter().enumerate() {
        for (k, v) in input_row(&s.expression, s.zt, zt_augmented).into_iter().enumerate() {
            inputs[(j, k)] = v;
        }
    }
    let targets = person.ict().map(|ict| {
        Mat::from_fn(n, 2, |j, c| {
            let p = ict[j].encode();
            if c == 0 {
                p.t1
            } else {
                p.t2
            }
        })
    });
    Sequence { inputs, targets }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Activations of one direction, indexed by sample position.
struct DirectionTrace {
    /// `N x 4H` post-activation gates.
    gates: Mat,
    /// `N x H`
    cell: Mat,
    /// `N x H`
    hidden: Mat,
}

struct SequenceTrace {
    fwd: DirectionTrace,
    bwd: DirectionTrace,
    /// `N x P`
    out: Mat,
    /// `N x 2`
    pred: Mat,
}

fn run_direction(cell: &LstmCell, x: &Mat, reverse: bool) -> DirectionTrace {
    let n = x.nrows();
    let h = cell.hidden();
    let mut pre = x * &cell.w_in;
    for mut row in pre.row_iter_mut() {
        row += &cell.b_in;
        row += &cell.b_rec;
    }
    let mut gates = Mat::zeros(n, N_GATES * h);
    let mut c_all = Mat::zeros(n, h);
    let mut h_all = Mat::zeros(n, h);
    let mut h_prev = vec![0.0; h];
    let mut c_prev = vec![0.0; h];
    let mut z = vec![0.0; N_GATES * h];
    for step in 0..n {
        let t = if reverse { n - 1 - step } else { step };
        for (col, zc) in z.iter_mut().enumerate() {
            let wcol = cell.w_rec.column(col);
            let mut acc = pre[(t, col)];
            for (hi, wi) in h_prev.iter().zip(wcol.iter()) {
                acc += hi * wi;
            }
            *zc = acc;
        }
        for u in 0..h {
            let e = sigmoid(z[u]);
            let p = sigmoid(z[h + u]);
            let a = z[2 * h + u].tanh();
            let o = sigmoid(z[3 * h + u]);
            let c = p * c_prev[u] + e * a;
            let hv = o * c.tanh();
            gates[(t, u)] = e;
            gates[(t, h + u)] = p;
            gates[(t, 2 * h + u)] = a;
            gates[(t, 3 * h + u)] = o;
            c_all[(t, u)] = c;
            h_all[(t, u)] = hv;
            c_prev[u] = c;
            h_prev[u] = hv;
        }
    }
    DirectionTrace {
        gates,
        cell: c_all,
        hidden: h_all,
    }
}

fn add_row_to_rows(m: &mut Mat, row: &Mat) {
    for mut r in m.row_iter_mut() {
        r += row;
    }
}

fn column_sums(m: &Mat) -> Mat {
    let sums: RowDVector<f64> = m.row_sum();
    Mat::from_row_slice(1, m.ncols(), sums.as_slice())
}

impl BiLstmModel {
    pub fn zeros(d: usize, h: usize, p: usize) -> Self {
        BiLstmModel {
            forward: LstmCell::zeros(d, h),
            backward: LstmCell::zeros(d, h),
            w_fo: Mat::zeros(h, p),
            w_bo: Mat::zeros(h, p),
            b_o: Mat::zeros(1, p),
            theta: Mat::zeros(p, 2),
            beta: Mat::zeros(d, 2),
            beta0: Mat::zeros(1, 2),
        }
    }

    /// Seeded initialization: uniform on `(-1/sqrt(H), 1/sqrt(H))` for every
    /// LSTM and output-layer block, zeros for `theta`, `beta`, `beta0`.
    pub fn init(d: usize, h: usize, p: usize, seed: u64) -> Self {
        assert!(d >= 1 && h >= 1 && p >= 1, "dimensions must be positive");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bound = 1.0 / (h as f64).sqrt();
        let mut m = BiLstmModel::zeros(d, h, p);
        for block in [
            &mut m.forward.w_in,
            &mut m.forward.w_rec,
            &mut m.forward.b_in,
            &mut m.forward.b_rec,
            &mut m.backward.w_in,
            &mut m.backward.w_rec,
            &mut m.backward.b_in,
            &mut m.backward.b_rec,
            &mut m.w_fo,
            &mut m.w_bo,
            &mut m.b_o,
        ] {
            // column-major fill keeps the draw order fixed
            block.iter_mut().for_each(|w| *w = rng.random_range(-bound..bound));
        }
        m
    }

    pub fn input_dim(&self) -> usize {
        self.beta.nrows()
    }

    pub fn hidden(&self) -> usize {
        self.forward.hidden()
    }

    pub fn output_dim(&self) -> usize {
        self.theta.nrows()
    }

    pub fn zeros_like(&self) -> Self {
        BiLstmModel::zeros(self.input_dim(), self.hidden(), self.output_dim())
    }

    pub fn block_names() -> [&'static str; 14] {
        [
            "forward.w_in",
            "forward.w_rec",
            "forward.b_in",
            "forward.b_rec",
            "backward.w_in",
            "backward.w_rec",
            "backward.b_in",
            "backward.b_rec",
            "w_fo",
            "w_bo",
            "b_o",
            "theta",
            "beta",
            "beta0",
        ]
    }

    pub fn blocks(&self) -> [&Mat; 14] {
        [
            &self.forward.w_in,
            &self.forward.w_rec,
            &self.forward.b_in,
            &self.forward.b_rec,
            &self.backward.w_in,
            &self.backward.w_rec,
            &self.backward.b_in,
            &self.backward.b_rec,
            &self.w_fo,
            &self.w_bo,
            &self.b_o,
            &self.theta,
            &self.beta,
            &self.beta0,
        ]
    }

    pub fn blocks_mut(&mut self) -> [&mut Mat; 14] {
        [
            &mut self.forward.w_in,
            &mut self.forward.w_rec,
            &mut self.forward.b_in,
            &mut self.forward.b_rec,
            &mut self.backward.w_in,
            &mut self.backward.w_rec,
            &mut self.backward.b_in,
            &mut self.backward.b_rec,
            &mut self.w_fo,
            &mut self.w_bo,
            &mut self.b_o,
            &mut self.theta,
            &mut self.beta,
            &mut self.beta0,
        ]
    }

    pub fn n_params(&self) -> usize {
        self.blocks().iter().map(|b| b.len()).sum()
    }

    /// `self += alpha * other`, block by block.
    pub fn axpy(&mut self, alpha: f64, other: &BiLstmModel) {
        for (a, b) in self.blocks_mut().into_iter().zip(other.blocks()) {
            *a += b * alpha;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.blocks().iter().all(|b| b.iter().all(|v| v.is_finite()))
    }

    /// Flat parameter access in block order (column-major within a block).
    pub fn param(&self, idx: usize) -> f64 {
        let mut i = idx;
        for b in self.blocks() {
            if i < b.len() {
                return b[i];
            }
            i -= b.len();
        }
        panic!("parameter index {idx} out of range")
    }

    pub fn set_param(&mut self, idx: usize, value: f64) {
        let mut i = idx;
        for b in self.blocks_mut() {
            if i < b.len() {
                b[i] = value;
                return;
            }
            i -= b.len();
        }
        panic!("parameter index {idx} out of range")
    }

    /// The eight input-weight rows for input `k`: backward gates, then forward gates.
    pub fn input_rows(&self, k: usize) -> Vec<Vec<f64>> {
        let h = self.hidden();
        let mut out = Vec::with_capacity(2 * N_GATES);
        for cell in [&self.backward, &self.forward] {
            for g in 0..N_GATES {
                out.push((0..h).map(|u| cell.w_in[(k, g * h + u)]).collect());
            }
        }
        out
    }

    pub fn set_input_rows(&mut self, k: usize, rows: &[Vec<f64>]) {
        let h = self.hidden();
        for (ci, cell) in [&mut self.backward, &mut self.forward].into_iter().enumerate() {
            for g in 0..N_GATES {
                for u in 0..h {
                    cell.w_in[(k, g * h + u)] = rows[ci * N_GATES + g][u];
                }
            }
        }
    }

    /// Largest input weight magnitude touching input `k`, over both directions.
    pub fn max_input_weight(&self, k: usize) -> f64 {
        let a = self.forward.w_in.row(k).amax();
        let b = self.backward.w_in.row(k).amax();
        a.max(b)
    }

    pub fn beta_row_norm(&self, k: usize) -> f64 {
        self.beta.row(k).norm()
    }

    fn check_dims(&self, x: &Mat) -> Result<(), ModelError> {
        if x.ncols() != self.input_dim() {
            return Err(ModelError::DimensionMismatch {
                expected: self.input_dim(),
                found: x.ncols(),
            });
        }
        Ok(())
    }

    fn trace(&self, x: &Mat) -> SequenceTrace {
        let fwd = run_direction(&self.forward, x, false);
        let bwd = run_direction(&self.backward, x, true);
        let mut out = &fwd.hidden * &self.w_fo + &bwd.hidden * &self.w_bo;
        add_row_to_rows(&mut out, &self.b_o);
        let mut pred = &out * &self.theta + x * &self.beta;
        add_row_to_rows(&mut pred, &self.beta0);
        SequenceTrace { fwd, bwd, out, pred }
    }

    /// Predicted encoded pairs (`N x 2`) for one person.
    pub fn predict_sequence(&self, x: &Mat) -> Result<Mat, ModelError> {
        self.check_dims(x)?;
        Ok(self.trace(x).pred)
    }

    pub fn forward(&self, batch: &SequenceBatch) -> Result<Vec<Mat>, ModelError> {
        batch.sequences.iter().map(|s| self.predict_sequence(&s.inputs)).collect()
    }

    /// `1 / (2 n) * sum ||target - pred||^2` over labelled samples.
    pub fn loss(&self, batch: &SequenceBatch) -> Result<f64, ModelError> {
        let n = batch.n_labelled();
        if n == 0 {
            return Ok(0.0);
        }
        let mut total = 0.0;
        for s in &batch.sequences {
            if let Some(y) = &s.targets {
                let pred = self.predict_sequence(&s.inputs)?;
                total += (y - pred).norm_squared();
            }
        }
        Ok(total / (2.0 * n as f64))
    }

    /// Loss and its exact gradient with respect to every block.
    pub fn gradients(&self, batch: &SequenceBatch) -> Result<(f64, BiLstmModel), ModelError> {
        let mut grad = self.zeros_like();
        let n = batch.n_labelled();
        if n == 0 {
            return Ok((0.0, grad));
        }
        let scale = 1.0 / n as f64;
        let mut total = 0.0;
        for s in &batch.sequences {
            let Some(y) = &s.targets else { continue };
            self.check_dims(&s.inputs)?;
            let x = &s.inputs;
            let tr = self.trace(x);
            let resid = &tr.pred - y;
            total += resid.norm_squared();
            let d_pred = resid * scale;

            grad.theta += tr.out.transpose() * &d_pred;
            grad.beta += x.transpose() * &d_pred;
            grad.beta0 += column_sums(&d_pred);

            let d_out = &d_pred * self.theta.transpose();
            grad.w_fo += tr.fwd.hidden.transpose() * &d_out;
            grad.w_bo += tr.bwd.hidden.transpose() * &d_out;
            grad.b_o += column_sums(&d_out);

            let dh_f = &d_out * self.w_fo.transpose();
            let dh_b = &d_out * self.w_bo.transpose();
            backprop_direction(&self.forward, &mut grad.forward, x, &tr.fwd, &dh_f, false);
            backprop_direction(&self.backward, &mut grad.backward, x, &tr.bwd, &dh_b, true);
        }
        Ok((total / (2.0 * n as f64), grad))
    }

    /// Reorder the model so that it processes reversed sequences identically.
    pub fn swapped_directions(&self) -> BiLstmModel {
        let mut m = self.clone();
        std::mem::swap(&mut m.forward, &mut m.backward);
        std::mem::swap(&mut m.w_fo, &mut m.w_bo);
        m
    }
}

fn backprop_direction(cell: &LstmCell, grad: &mut LstmCell, x: &Mat, tr: &DirectionTrace, dh_out: &Mat, reverse: bool) {
    let n = x.nrows();
    let h = cell.hidden();
    let mut dz = Mat::zeros(n, N_GATES * h);
    let mut h_prev_rows = Mat::zeros(n, h);
    let mut dh_next = vec![0.0; h];
    let mut dc_next = vec![0.0; h];
    for step in (0..n).rev() {
        let t = if reverse { n - 1 - step } else { step };
        let prev = if step == 0 {
            None
        } else if reverse {
            Some(t + 1)
        } else {
            Some(t - 1)
        };
        for u in 0..h {
            let e = tr.gates[(t, u)];
            let p = tr.gates[(t, h + u)];
            let a = tr.gates[(t, 2 * h + u)];
            let o = tr.gates[(t, 3 * h + u)];
            let c = tr.cell[(t, u)];
            let c_prev = prev.map_or(0.0, |q| tr.cell[(q, u)]);
            let tc = c.tanh();
            let dh = dh_out[(t, u)] + dh_next[u];
            let dc = dc_next[u] + dh * o * (1.0 - tc * tc);
            dz[(t, u)] = dc * a * e * (1.0 - e);
            dz[(t, h + u)] = dc * c_prev * p * (1.0 - p);
            dz[(t, 2 * h + u)] = dc * e * (1.0 - a * a);
            dz[(t, 3 * h + u)] = dh * tc * o * (1.0 - o);
            dc_next[u] = dc * p;
            if let Some(q) = prev {
                h_prev_rows[(t, u)] = tr.hidden[(q, u)];
            }
        }
        // dh_{prev} = dz_t W_rec^T
        for (i, dn) in dh_next.iter_mut().enumerate() {
            let mut acc = 0.0;
            for col in 0..N_GATES * h {
                acc += dz[(t, col)] * cell.w_rec[(i, col)];
            }
            *dn = acc;
        }
    }
    grad.w_in += x.transpose() * &dz;
    grad.w_rec += h_prev_rows.transpose() * &dz;
    let db = column_sums(&dz);
    grad.b_in += &db;
    grad.b_rec += &db;
}

/// Row-major weight block as stored on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Block {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl From<&Mat> for Block {
    fn from(m: &Mat) -> Self {
        Block {
            rows: m.nrows(),
            cols: m.ncols(),
            data: m.transpose().as_slice().to_vec(),
        }
    }
}

impl Block {
    fn to_mat(&self, name: &str) -> Result<Mat, ModelError> {
        if self.data.len() != self.rows * self.cols {
            return Err(ModelError::MalformedBlock {
                name: name.to_string(),
                msg: format!("{} values for a {}x{} block", self.data.len(), self.rows, self.cols),
            });
        }
        Ok(Mat::from_row_slice(self.rows, self.cols, &self.data))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelRepr {
    pub input_dim: usize,
    pub hidden: usize,
    pub output_dim: usize,
    pub blocks: Vec<(String, Block)>,
}

impl From<BiLstmModel> for ModelRepr {
    fn from(m: BiLstmModel) -> Self {
        ModelRepr {
            input_dim: m.input_dim(),
            hidden: m.hidden(),
            output_dim: m.output_dim(),
            blocks: BiLstmModel::block_names()
                .iter()
                .zip(m.blocks())
                .map(|(n, b)| (n.to_string(), Block::from(b)))
                .collect(),
        }
    }
}

impl TryFrom<ModelRepr> for BiLstmModel {
    type Error = ModelError;

    fn try_from(r: ModelRepr) -> Result<Self, Self::Error> {
        let mut m = BiLstmModel::zeros(r.input_dim, r.hidden, r.output_dim);
        let names = BiLstmModel::block_names();
        if r.blocks.len() != names.len() {
            return Err(ModelError::MalformedBlock {
                name: "model".into(),
                msg: format!("expected {} blocks, found {}", names.len(), r.blocks.len()),
            });
        }
        for ((name, block), (want, slot)) in r.blocks.iter().zip(names.iter().zip(m.blocks_mut())) {
            if name != want {
                return Err(ModelError::MalformedBlock {
                    name: name.clone(),
                    msg: format!("expected block {want}"),
                });
            }
            let mat = block.to_mat(name)?;
            if mat.shape() != slot.shape() {
                return Err(ModelError::MalformedBlock {
                    name: name.clone(),
                    msg: format!("shape {:?}, expected {:?}", mat.shape(), slot.shape()),
                });
            }
            *slot = mat;
        }
        Ok(m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn random_batch(d: usize, lens: &[usize], seed: u64) -> SequenceBatch {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        SequenceBatch {
            sequences: lens
                .iter()
                .map(|&n| Sequence {
                    inputs: Mat::from_fn(n, d, |_, _| rng.random_range(-1.5..1.5)),
                    targets: Some(Mat::from_fn(n, 2, |_, _| rng.random_range(-1.0..1.0))),
                })
                .collect(),
        }
    }

    fn random_model(d: usize, h: usize, p: usize, seed: u64) -> BiLstmModel {
        let mut m = BiLstmModel::init(d, h, p, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 1000);
        for b in [&mut m.theta, &mut m.beta, &mut m.beta0] {
            b.iter_mut().for_each(|w| *w = rng.random_range(-0.7..0.7));
        }
        m
    }

    #[test]
    fn zero_model_predicts_intercept() {
        let mut m = BiLstmModel::zeros(5, 3, 2);
        m.beta0 = Mat::from_row_slice(1, 2, &[0.25, -0.5]);
        let batch = random_batch(5, &[4, 2], 1);
        for pred in m.forward(&batch).unwrap() {
            for r in pred.row_iter() {
                assert_eq!(r[0], 0.25);
                assert_eq!(r[1], -0.5);
            }
        }
    }

    #[test]
    fn theta_zero_is_linear_and_order_free() {
        let mut m = random_model(4, 3, 2, 2);
        m.theta.fill(0.0);
        let batch = random_batch(4, &[5], 3);
        let x = &batch.sequences[0].inputs;
        let pred = m.predict_sequence(x).unwrap();
        for j in 0..5 {
            for c in 0..2 {
                let lin: f64 = (0..4).map(|k| x[(j, k)] * m.beta[(k, c)]).sum::<f64>() + m.beta0[(0, c)];
                assert_abs_diff_eq!(pred[(j, c)], lin, epsilon = 1e-12);
            }
        }
        let rev = Mat::from_fn(5, 4, |j, k| x[(4 - j, k)]);
        let pred_rev = m.predict_sequence(&rev).unwrap();
        for j in 0..5 {
            assert_abs_diff_eq!(pred_rev[(j, 0)], pred[(4 - j, 0)], epsilon = 1e-12);
        }
    }

    #[test]
    fn context_changes_output() {
        let m = random_model(4, 3, 2, 4);
        let batch = random_batch(4, &[4], 5);
        let x = &batch.sequences[0].inputs;
        let alone = m.predict_sequence(&x.rows(2, 1).into_owned()).unwrap();
        let within = m.predict_sequence(x).unwrap();
        assert!((alone[(0, 0)] - within[(2, 0)]).abs() > 1e-6);
    }

    #[test]
    fn reversal_symmetry() {
        let m = random_model(6, 4, 3, 6);
        let batch = random_batch(6, &[5], 7);
        let x = &batch.sequences[0].inputs;
        let n = x.nrows();
        let rev = Mat::from_fn(n, 6, |j, k| x[(n - 1 - j, k)]);
        let a = m.predict_sequence(x).unwrap();
        let b = m.swapped_directions().predict_sequence(&rev).unwrap();
        for j in 0..n {
            for c in 0..2 {
                assert_abs_diff_eq!(a[(j, c)], b[(n - 1 - j, c)], epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn dimension_mismatch() {
        let m = BiLstmModel::zeros(3, 2, 2);
        let x = Mat::zeros(2, 4);
        assert_eq!(
            m.predict_sequence(&x),
            Err(ModelError::DimensionMismatch { expected: 3, found: 4 })
        );
    }

    #[test]
    fn loss_matches_direct_formula() {
        let m = random_model(3, 2, 2, 8);
        let batch = random_batch(3, &[3, 4], 9);
        let mut acc = 0.0;
        let mut n = 0;
        for s in &batch.sequences {
            let p = m.predict_sequence(&s.inputs).unwrap();
            let y = s.targets.as_ref().unwrap();
            for j in 0..p.nrows() {
                acc += (y[(j, 0)] - p[(j, 0)]).powi(2) + (y[(j, 1)] - p[(j, 1)]).powi(2);
                n += 1;
            }
        }
        assert_abs_diff_eq!(m.loss(&batch).unwrap(), acc / (2.0 * n as f64), epsilon = 1e-14);
        let (l, _) = m.gradients(&batch).unwrap();
        assert_abs_diff_eq!(l, acc / (2.0 * n as f64), epsilon = 1e-14);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let m = random_model(6, 4, 3, 10);
        let batch = random_batch(6, &[3, 3], 11);
        let (_, g) = m.gradients(&batch).unwrap();
        let step = 1e-5;
        let mut worst: f64 = 0.0;
        for idx in 0..m.n_params() {
            let mut plus = m.clone();
            plus.set_param(idx, m.param(idx) + step);
            let mut minus = m.clone();
            minus.set_param(idx, m.param(idx) - step);
            let fd = (plus.loss(&batch).unwrap() - minus.loss(&batch).unwrap()) / (2.0 * step);
            let an = g.param(idx);
            let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-3);
            worst = worst.max(rel);
        }
        assert!(worst <= 1e-5, "worst relative error {worst}");
    }

    #[test]
    fn beta_gradient_is_least_squares_gradient() {
        let mut m = random_model(4, 3, 2, 12);
        m.theta.fill(0.0);
        let batch = random_batch(4, &[4, 3], 13);
        let (_, g) = m.gradients(&batch).unwrap();
        // X^T (X beta + beta0 - Y) / n over the stacked design
        let mut want = Mat::zeros(4, 2);
        let n = batch.n_samples() as f64;
        for s in &batch.sequences {
            let mut r = &s.inputs * &m.beta - s.targets.as_ref().unwrap();
            add_row_to_rows(&mut r, &m.beta0);
            want += s.inputs.transpose() * r / n;
        }
        assert!((g.beta - want).amax() <= 1e-13);
    }

    #[test]
    fn duplicated_person_keeps_normalized_gradient() {
        let m = random_model(3, 2, 2, 14);
        let one = random_batch(3, &[4], 15);
        let two = SequenceBatch {
            sequences: vec![one.sequences[0].clone(), one.sequences[0].clone()],
        };
        let (l1, g1) = m.gradients(&one).unwrap();
        let (l2, g2) = m.gradients(&two).unwrap();
        assert_abs_diff_eq!(l1, l2, epsilon = 1e-14);
        for (a, b) in g1.blocks().iter().zip(g2.blocks()) {
            assert!((*a - b).amax() <= 1e-14);
        }
    }

    #[test]
    fn json_round_trip_is_exact() {
        let m = random_model(5, 3, 2, 16);
        let text = serde_json::to_string(&m).unwrap();
        let back: BiLstmModel = serde_json::from_str(&text).unwrap();
        assert_eq!(back, m);
        assert!(text.contains("\"forward.w_in\""));
    }

    #[test]
    fn input_rows_round_trip() {
        let mut m = random_model(5, 3, 2, 17);
        let rows = m.input_rows(2);
        assert_eq!(rows.len(), 8);
        assert_eq!(rows[0][1], m.backward.w_in[(2, 1)]);
        assert_eq!(rows[5][2], m.forward.w_in[(2, 3 + 2)]);
        let zeros = vec![vec![0.0; 3]; 8];
        m.set_input_rows(2, &zeros);
        assert_eq!(m.max_input_weight(2), 0.0);
        assert!(m.max_input_weight(1) > 0.0);
    }
}
