//! Certified implicit-function iterations and local rigidity of finitely
//! presented group representations.
//!
//! The crate is organised bottom-up:
//!
//! - [`linops`]: dense operators, pseudo-inverses and open-mapping constants
//! - [`ift`]: the fiber solver and its certificate
//! - [`words`]: free-group words and presentations
//! - [`liegroup`]: matrix groups, `exp`/`log` and adjoint actions
//! - [`cohomology`]: the coboundaries `δ⁰`, `δ¹` and `H¹`
//! - [`rigidity`]: the rigidity maps, verdicts and conjugator recovery

pub mod cohomology;
pub mod ift;
pub mod liegroup;
pub mod linops;
pub mod rigidity;
pub mod words;

pub use ift::{
    certify_neighborhood, solve_fiber, DifferentiableMap, FiberOptions, IftConstants, IftError, IterationTrace,
};
pub use linops::{LinearOperator, LinopsError, RankTolerance, SpectralDecomposition};
