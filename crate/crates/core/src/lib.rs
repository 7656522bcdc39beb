//! Semantic-communication link with a latent-space safety monitor.
//!
//! The pieces compose as `data → vae → channel → gpdetect`, with `adversary`
//! producing perturbed inputs and `hitlrl` steering fine-tuning of the VAE.

// `!(x > 0.0)` style guards are used on purpose so NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod adversary;
pub mod channel;
pub mod data;
pub mod gpdetect;
pub mod harness;
pub mod hitlrl;
pub mod linalg;
pub mod nncore;
pub mod rng;
pub mod vae;
