//! Core types and algorithms for building text-to-image preference data:
//! prompt and QA generation, noise-diversified candidates, scoring, pair
//! selection, the diffusion DPO objective and pairwise evaluation.

pub mod backend;
pub mod candidates;
pub mod dpo;
pub mod eval;
pub mod hashing;
pub mod jsonl;
pub mod model;
pub mod preference;
pub mod prompts;
pub mod qa;
pub mod reply;
pub mod scoring;
pub mod store;
