//! Neural emulation of the harmonic oscillator's classical limit.
//!
//! The pipeline: integrate expectation-value trajectories over a grid of ħ
//! values ([`dataset`]), fit a 3 → 64 → 128 → T ReLU network mapping
//! (x₀, p₀, ħ) to ⟨x̂(t)⟩ ([`nn`], [`train`]), and compare its predictions
//! with the closed-form classical trajectory as ħ varies ([`eval`]).

pub mod cli;
pub mod dataset;
pub mod dynamics;
pub mod error;
pub mod eval;
pub mod nn;
pub mod rng;
pub mod train;

pub use error::{Error, Result};
