//! Generalized gradients of piecewise smooth functions in abs-normal form.
//!
//! A function is given as an evaluation tape ([`tape::Tape`]) whose only
//! nonsmooth operation is `abs`. At a base point the tape is linearized into
//! abs-normal data ([`absnormal::AbsNormalPoint`]), from which piece gradients,
//! the LIKQ verdict and the set of limiting gradients follow
//! ([`gradients`]). [`oracle`] provides finite-difference and sampling checks,
//! and [`relunet`] applies the machinery to ReLU networks.

pub mod absnormal;
pub mod error;
pub mod gradients;
pub mod hull;
pub mod linalg;
pub mod oracle;
pub mod problems;
pub mod random;
pub mod relunet;
pub mod tape;
pub mod verify;

pub use absnormal::{extract, AbsNormalPoint, SignatureVector, DEFAULT_ENUM_CAP, DEFAULT_KINK_TOL};
pub use error::{Error, Result};
pub use gradients::{
    check_likq, check_rank_stability, grad_sigma, grad_xi, limiting_gradients, GradientSet,
    LikqStatus, XiChoice, DEFAULT_RANK_TOL,
};
pub use tape::{parse_tape, Tape};
