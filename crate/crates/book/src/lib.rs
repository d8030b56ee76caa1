//! The guide under `book/src`, one module per chapter, so that
//! `cargo test --doc -p phasefd-book` runs every Rust snippet in it.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("../../../book/src/data-model.md")]
pub mod data_model {}
#[doc = include_str!("../../../book/src/log-grid.md")]
pub mod log_grid {}
#[doc = include_str!("../../../book/src/factorization.md")]
pub mod factorization {}
#[doc = include_str!("../../../book/src/freezing.md")]
pub mod freezing {}
#[doc = include_str!("../../../book/src/sparsity.md")]
pub mod sparsity {}
#[doc = include_str!("../../../book/src/phase-rule.md")]
pub mod phase_rule {}
#[doc = include_str!("../../../book/src/evaluation.md")]
pub mod evaluation {}
#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
#[doc = include_str!("../../../book/src/service.md")]
pub mod service {}
