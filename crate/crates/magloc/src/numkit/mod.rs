//! Minimal numeric engine: tensors, layer kernels, a whole-layer autodiff
//! tape, Adam, finite-difference checking, and checkpoint persistence.
//!
//! Scope is exactly what the localizer architecture needs; there is no
//! graph optimizer, fusion, or GPU path.

pub mod adam;
pub mod checkpoint;
pub mod gradcheck;
pub mod ops;
pub mod tape;
pub mod tensor;

pub use adam::AdamState;
pub use ops::{count_params, same_padding, Padding};
pub use tape::{Gradients, Tape, ValueId};
pub use tensor::{Scalar, Tensor};
