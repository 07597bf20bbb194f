//! Reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! A [`Tape`] records every operation of a forward pass as an append-only
//! list of nodes. Each node keeps its forward value, so the backward sweep
//! only walks the tape in reverse order and accumulates vector-Jacobian
//! products into the inputs. Node ids are assigned in creation order, which
//! makes the tape topologically sorted by construction.
//!
//! Tensors are scalars, vectors or row-major matrices. Elementwise binary
//! operations accept identical shapes or a scalar on either side; the only
//! other broadcast is [`Tape::add_row`] (matrix plus a per-column vector).
//!
//! ```
//! use pif_autodiff::Tape;
//!
//! let mut tape = Tape::new();
//! let x = tape.param_scalar(2.0).unwrap();
//! let y = tape.param_scalar(3.0).unwrap();
//! let z = tape.mul(x, y).unwrap();
//! let grads = tape.backward(z).unwrap();
//! assert_eq!(tape.scalar_value(z), 6.0);
//! assert_eq!(grads.get(x), vec![3.0]);
//! ```

mod basis;
mod error;
mod shape;
mod tape;

pub use basis::{bspline_basis, bspline_basis_derivative, chebyshev_basis, uniform_knots};
pub use error::{AdError, Result};
pub use shape::Shape;
pub use tape::{Gradients, Tape, Value};
