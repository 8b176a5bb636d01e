//! Content-style identification via differential independence.
//!
//! The crate bundles the pieces of a desk-scale workbench:
//!
//! * [`autodiff`]: reverse-mode differentiation with first-class
//!   vector-Jacobian products.
//! * [`model`]: dependent latent sampling, encoders/decoders, generator and
//!   per-domain discriminators, inversion and translation.
//! * [`objective`]: adversarial, invertibility and Jacobian-orthogonality
//!   losses (exact and probe-based).
//! * [`jacobian`]: exact Jacobians, principal angles, the robustness bound
//!   and cost accounting.
//! * [`world`]: ground-truth worlds with a controllable tilt angle and the
//!   two-domain colorized digit pipeline.
//! * [`train`]: Adam, the alternating training loop, checkpoints and MMD.
//! * [`eval`]: R² identifiability reports, sweeps and estimator studies.

pub mod autodiff;
pub mod eval;
pub mod jacobian;
pub mod model;
pub mod objective;
pub mod train;
pub mod world;
