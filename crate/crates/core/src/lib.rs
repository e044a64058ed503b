//! Phoneme-sized vector-quantized sequence representations.
//!
//! The crate implements a desk-scale, framework-free pipeline for
//! learning discrete speech-like representations:
//!
//! - [`data`]: shared domain types, the 40-symbol phoneme inventory, and
//!   all file formats.
//! - [`quantizer`]: k-means quantization with straight-through gradients
//!   and Gumbel-Softmax quantization with temperature annealing.
//! - [`ctc`]: soft codeword posteriors, the CTC forward dynamic program
//!   in log space, and the codeword-phoneme mapping phase.
//! - [`segment`]: windowed kNN anomaly scoring, minimum-gap peak
//!   detection, majority-vote cluster correction, and the greedy
//!   fixed-count merge baseline.
//! - [`losses`]: the contrastive masked-prediction loss, the
//!   risk-minimization codebook loss, and the total objective, all with
//!   finite-difference-checked gradients.
//! - [`trainer`]: the end-to-end training loops (pretraining, staged
//!   codeword mapping, accent adaptation with drift reporting), a
//!   synthetic accent-shift corpus generator, span masking, checkpoints,
//!   and decoding.
//! - [`eval`]: phoneme error rate, boundary segmentation metrics with a
//!   time tolerance, codeword-drift export, and mean/SE aggregation.
//!
//! Every random draw derives from one master seed through counter-based
//! substreams ([`rng`]), so runs replay identically for any thread count.

pub mod ctc;
pub mod data;
pub mod error;
pub mod eval;
pub mod losses;
pub mod par;
pub mod quantizer;
pub mod rng;
pub mod segment;
pub mod trainer;

pub use error::{Error, Result};
