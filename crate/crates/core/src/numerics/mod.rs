//! Dense linear algebra, seeded randomness, reverse-mode differentiation and
//! optimizers shared by every learning component.

mod gradcheck;
mod linalg;
mod matrix;
mod optim;
pub mod rng;
mod tape;

pub use gradcheck::{
    check_tape_gradients, finite_diff_check, relative_error, tape_gradients, FdReport,
};
pub use linalg::{least_squares, procrustes, svd, LeastSquares, Svd};
pub use matrix::Matrix;
pub use optim::{Adagrad, Adam};
pub use tape::{sigmoid, softmax_rows, Activation, Gradients, ParamId, ParamStore, Tape, Var};
