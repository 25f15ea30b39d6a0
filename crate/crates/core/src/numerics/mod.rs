//! Linear algebra, distributions, and keyed random streams shared by the
//! rest of the crate.

pub mod dist;
pub mod linalg;
pub mod rng;

pub use dist::{
    sample_inverse_wishart, sample_scaled_beta, standard_normal, student_t_quantile,
    student_t_two_sided_p,
};
pub use linalg::{cholesky, mvn_conditional, SymMatrix};
pub use rng::{Purpose, RngStream, StreamFactory, StreamId};
