//! Desk-scale pipeline for evolution-based math instruction tuning.
//!
//! The crate wires together six subsystems:
//!
//! - [`corpus`]: the data model for instructions, solutions, and lineage,
//!   plus JSON Lines persistence, deduplication, and round-expansion
//!   bookkeeping.
//! - [`grader`]: final-answer extraction, normalization, and comparison for
//!   step-by-step solutions — the correctness oracle used everywhere else.
//! - [`evolver`]: downward/upward instruction evolution through pluggable
//!   generator backends, and ranking-data construction for the instruction
//!   reward model.
//! - [`rewards`]: a small feed-forward scoring network with hand-written
//!   gradients, feature extraction, pairwise-preference training for the
//!   instruction reward model (IRM), step-label training for the process
//!   reward model (PRM), and the product reward `r = r_i * r_a`.
//! - [`rl`]: a synthetic multi-step arithmetic microworld, a compact
//!   categorical policy, and a PPO trainer with GAE that consumes the
//!   product reward.
//! - [`harness`]: SFT data curation, byte-exact prompt rendering, pass@1
//!   evaluation with subtopic/level breakdowns, report emission, and the
//!   CLI that sequences the pipeline.
//!
//! Everything is deterministic given seeds: batch work is fanned out with
//! order-preserving maps ([`par`]) and per-item derived seeds, so results
//! are identical with or without the `parallel` feature.

pub mod corpus;
pub mod evolver;
pub mod grader;
pub mod harness;
pub mod par;
pub mod rewards;
pub mod rl;
pub(crate) mod seeding;
