//! specnet: reference-free phishing detection from a page's domain name and
//! HTML structure.
//!
//! The pipeline parses raw HTML into a tag/attribute tree, embeds tokens and
//! the domain, refines features with a small graph-convolution stack, prunes
//! with root-preserving top-k pooling, runs a mirrored tree autoencoder, and
//! turns reconstruction errors into an ensemble verdict.

pub mod backbone;
pub mod bundle;
pub mod classifier;
pub mod config;
pub mod embed;
pub mod error;
pub mod ingest;
pub mod model;
pub mod nn;
pub mod perturb;
pub mod specular;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
