//! Fault-tolerant parallel QR decomposition with checksum coding.
//!
//! The crate factors a full-rank square matrix on a simulated `p x p`
//! processor grid using block modified Gram-Schmidt, protecting both the
//! Q-factor and the R-factor against fail-stop node failures with
//! checksum codes, and restoring the Q-factor's orthogonality afterwards
//! with a sparse post-orthogonalization transform. Communication and
//! computation are charged under an alpha-beta-gamma cost model so the
//! simulated timings can be checked against the closed-form overhead
//! expressions.
//!
//! Module map:
//! - [`densela`]: dense matrices and sequential QR kernels,
//! - [`codec`]: checksum-generator construction and validation (out-of-node
//!   and in-node, Q-factor and R-factor), MDS checking, recovery math,
//! - [`gridsim`]: the processor-grid simulator, collectives, fault
//!   injection, and the cost ledger,
//! - [`engine`]: the coded QR pipeline (encode, factorize with recovery,
//!   audit, post-orthogonalize, solve),
//! - [`costmodel`]: closed-form overhead formulas and scaling sweeps,
//! - [`cli`]: the command-line front end.

pub mod codec;
pub mod costmodel;
pub mod gridsim;
pub mod io;
pub mod densela;
pub mod engine;

pub use densela::{DenseMatrix, DenselaError};

pub mod cli;
