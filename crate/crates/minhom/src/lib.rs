//! Minimum-cost homomorphism solving for digraphs with vertex-mapping costs.
//!
//! Given an input digraph `D`, a target digraph `H`, and rational costs
//! `c(x, a)` for mapping vertex `x` of `D` to vertex `a` of `H` (with `inf`
//! expressing forbidden images), the library searches for a homomorphism
//! `f : V(D) -> V(H)` minimizing the total cost `sum_x c(x, f(x))`.
//!
//! The toolkit is organized around structural orderings of the target:
//!
//! * [`orderings`] finds and verifies min-orderings, min-max orderings,
//!   and level-respecting circular variants, builds arc completions, and
//!   detects the obstructions (invertible pairs, dual arc triples) that
//!   rule such orderings out.
//! * [`lp`] builds linear relaxations of the homomorphism problem driven
//!   by those orderings, including systems for doubled (bipartite) forms.
//! * [`simplex`] solves the relaxations in floating-point or exact
//!   rational arithmetic and provides branch-and-bound integer solving
//!   plus certified rational lower bounds.
//! * [`round`] turns fractional solutions into homomorphisms by threshold
//!   rounding followed by queue-driven shift repair, with full
//!   de-randomization over the finite candidate grid.
//! * [`exact`] holds brute-force oracles used for cross-checking.
//! * [`experiment`] runs seeded batch comparisons of the LP, integer, and
//!   rounded values and writes deterministic CSV reports.

pub mod consistency;
pub mod exact;
pub mod experiment;
pub mod fileio;
pub mod gen;
pub mod lp;
pub mod model;
pub mod orderings;
pub mod round;
pub mod simplex;

pub use model::{Cost, Digraph, Homomorphism, Instance, Ordering, Rat};
