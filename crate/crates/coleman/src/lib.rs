//! Exact arithmetic for Lubin-Tate formal groups over two-level towers of
//! local fields, Coleman's trace operator, and the eigenspace machinery
//! built on top of it.
//!
//! Everything is computed at a finite degree cap `D` (series are exact modulo
//! `x^{D+1}`) and a finite absolute π-adic precision `N` (ring elements are
//! known modulo `π_K^N`). Both budgets are explicit arguments or context
//! state; no operation silently pretends to more precision than the inputs
//! support.
//!
//! Module map:
//! - [`tower`]: the two-level integer rings `ℤ_p ⊂ O_L ⊂ O_K`, canonical
//!   forms, valuations, exact division, unit inversion.
//! - [`series`]: truncated univariate/bivariate power series over `O_K`,
//!   composition, de-substitution, congruence checks, and a small
//!   fraction-field coefficient layer for logarithms.
//! - [`formal_group`]: Lubin-Tate group laws from a Frobenius series,
//!   endomorphisms, the formal inverse, log/exp, transports, folds.
//! - [`trace`]: the degree-`(q_K - 1)` torsion algebra, Coleman's trace
//!   operator, root sums, trace preimages and the truncated kernel.
//! - [`eigen`]: membership checks for the four series modules, the `k`/`w`
//!   pair, `ρ_α` and its inverse, the `T` operator, the lifting pipeline,
//!   twists, and the map into the trace kernel.
//! - [`io`] / [`cli`]: structured-text configs and series files, plus the
//!   command-line front end.
//!
//! The runnable examples under `examples/` are the quickest tour; each one
//! exercises a single capability end to end (`cargo run --example group_law`,
//! `cargo run --example trace_operator`, ...).

pub mod cli;
pub mod contexts;
pub mod eigen;
pub mod error;
pub mod formal_group;
pub mod io;
pub mod series;
pub mod suite;
pub mod tower;
pub mod trace;

pub use error::{Error, Result};
pub use tower::{Budget, RingElement, TowerSpec};
