//! Desk-scale laboratory for augmentation-invariant self-supervised learning:
//! MoCo v2, MoCo v2+, S-MoCo v2+ and BYOL on synthetic images, with the
//! optimizers, checkpoint surgery and representation diagnostics needed to
//! compare them.

pub mod augment;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod frameworks;
pub mod numerics;
pub mod optim;
pub mod runner;
pub mod surgery;

pub use error::{Error, Result};
