//! Core of the X-ToM explanation game: the And-Or graph grammar, the
//! performer that interprets scenes, the explainer's bubble actions and
//! belief over the user's mind, the simulated user and the trust evaluator.

pub mod aog;
pub mod belief;
pub mod bubble;
pub mod engine;
pub mod error;
pub mod evaluator;
pub mod performer;
pub mod policy;
pub mod simuser;

pub use error::{Error, ErrorCode, Result};
