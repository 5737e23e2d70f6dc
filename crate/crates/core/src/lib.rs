//! Multi-agent multimodal news topic classification.
//!
//! An article (headline, body, images) flows through perception agents,
//! dense knowledge retrieval, a bounded reason-and-act loop, gated
//! multimodal fusion and a reward-driven refinement loop that scores every
//! report for classification confidence, evidence grounding and cross-modal
//! consistency. All model capabilities sit behind [`backends::Backend`], with
//! a deterministic mock for offline experiments.

pub mod backends;
pub mod cli;
pub mod config;
pub mod data;
pub mod eval;
pub mod fusion;
pub mod model;
pub mod perception;
pub mod pipeline;
pub mod reasoning;
pub mod retrieval;
pub mod reward;
pub mod synth;
pub mod text;
