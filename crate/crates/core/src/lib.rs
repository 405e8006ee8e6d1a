//! Prediction of internal circadian time (ICT) and dim-light melatonin onset
//! (DLMO) from longitudinal biomarker panels.
//!
//! The central model is a bidirectional LSTM with a linear residual
//! connection whose input weights are tied to the linear weights through a
//! hierarchical group-sparse constraint, trained by proximal gradient descent
//! ([`trainer`], [`hierprox`]). Linear baselines, DLMO estimation rules, and
//! a split/search/evaluate protocol sit alongside it.

pub mod baselines;
pub mod bilstm;
pub mod circular_time;
pub mod cli;
pub mod data;
pub mod dlmo;
pub mod evaluation;
pub mod hierprox;
pub mod trainer;
