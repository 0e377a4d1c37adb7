//! Reverse-mode differentiation over dynamically shaped arrays.
//!
//! The crate provides exactly the operator set needed by gated convolutional
//! networks: elementwise arithmetic with size-1 broadcasting, reductions,
//! slicing and concatenation, 1D/2D (transposed) convolution, batch
//! normalization, GLU and dropout, plus an Adam optimizer over named
//! parameters.
//!
//! ```
//! use ndarray::arr1;
//! use vclab_autodiff::Tape;
//!
//! let tape = Tape::<f64>::new();
//! let t = tape.var(arr1(&[1.0, -2.0]).into_dyn());
//! let loss = (t * t).sum();
//! let grads = loss.backward().unwrap();
//! assert_eq!(grads.value(t).into_raw_vec_and_offset().0, vec![2.0, -4.0]);
//! ```

mod adam;
mod conv;
mod error;
pub mod nn;
mod ops;
mod param;
mod real;
mod tape;

pub use adam::Adam;
pub use conv::{conv, conv_output_len, conv_transpose_output_len, ConvGeometry, ConvOptions};
pub use error::{AutodiffError, Result};
pub use param::{AdamState, Bound, ParamId, ParamStore, Parameter};
pub use real::Real;
pub use tape::{Gradients, Tape, Var};
