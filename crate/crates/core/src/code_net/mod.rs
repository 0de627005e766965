//! Networks written as controlled ODEs
//! `X_t = x + Σ_i ∫_0^t V_i^θ(s, X_{s−}) du_i(s)` driven by deterministic
//! finite-variation controls, together with their first and second
//! parameter variations and Grönwall-type certificates.

mod certificate;
mod control;
mod dnn;
mod field;
mod solve;

pub use certificate::{
    check_envelopes, code_certificate, code_loss_certificate, required_moment, CodeCertificate, CodeSampleNorms,
    EnvelopeCheck, FieldEnvelopes, Rigor,
};
pub use control::{total_variation, AcSegment, Control};
pub use dnn::{dnn_as_code, equivalence_error, DnnCode, DnnField};
pub use field::{ScalarLinearField, SecondOrderField, TanhBilinearField, VectorField, ZeroField};
pub use solve::{solve_code, solve_first_variation, solve_second_variation, SolveStatus, Trajectory};
