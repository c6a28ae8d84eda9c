//! Step-wise, five-dimensional process rewards for agents acting in
//! deterministic task graphs.
//!
//! The pipeline runs bottom-up: [`taskenv`] graphs with exact shortest-path
//! oracles, [`dims`] score formulas, [`judge`] for the two binary dimensions,
//! [`mctsp`] tree search over composite step values, [`collect`] annotation,
//! [`pairs`] preference-pair construction, [`trainer`] for the regression head
//! and gating network, [`evalbench`] pairwise accuracy and correlation, and
//! [`guide`] for reward-guided action selection.

pub mod collect;
pub mod dims;
pub mod evalbench;
pub mod fixtures;
pub mod guide;
pub mod judge;
pub mod mctsp;
pub mod pairs;
pub mod taskenv;
pub mod trainer;
pub mod util;
