//! Dense tensors, reverse-mode differentiation, Fourier transforms,
//! seeded randomness and gradient checking.

mod fourier;
pub mod gradcheck;
mod rng;
mod scalar;
pub mod scan;
mod tape;
mod tensor;

pub use fourier::{dft2, hermitian_partner, idft2, ComplexGrid, InverseDft};
pub use rng::SeededRng;
pub use scalar::{sigmoid, softplus, Precision, Scalar};
pub use tape::{cross_entropy_per_sample, log_sum_exp, matmul_into, Tape, Var};
pub use tensor::Tensor;

