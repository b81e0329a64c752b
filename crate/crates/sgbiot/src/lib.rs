//! Stochastic Galerkin mixed finite element solver for a five-field linear
//! poroelasticity (Biot consolidation) model with uncertain Young modulus and
//! hydraulic conductivity.
//!
//! The discrete problem couples biquadratic displacement with four bilinear
//! pressure-like fields on structured rectangle meshes, and a polynomial
//! chaos expansion over the uncertain inputs. The resulting saddle-point
//! system is Kronecker-structured and is solved matrix-free with MINRES and
//! a block-diagonal preconditioner that is robust with respect to the
//! Poisson ratio, the Biot-Willis constant and the storage coefficient.
//!
//! Modules follow the pipeline: [`mesh`] -> [`assembly`] + [`stochastic`] ->
//! [`system`] -> [`precond`] + [`solver`] -> [`post`], orchestrated by
//! [`cli`].

pub mod assembly;
pub mod cli;
pub mod mesh;
pub mod post;
pub mod precond;
pub mod solver;
pub mod sparse;
pub mod stochastic;
pub mod system;

/// Crate-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid domain: {0}")]
    Domain(String),
    #[error("mesh sizing: {0}")]
    MeshSizing(String),
    #[error("assembly: {0}")]
    Assembly(String),
    #[error("stochastic model: {0}")]
    Stochastic(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid parameters: {0}")]
    Params(String),
    #[error("factorization of block {block} failed at pivot {pivot}: matrix is not positive definite")]
    Factorization { block: &'static str, pivot: usize },
    #[error("solver: {0}")]
    Solver(String),
    #[error("config: {0}")]
    Config(String),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
