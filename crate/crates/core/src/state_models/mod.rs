//! State spaces, one-step kernels and the discretized reference processes.

mod discretize;
mod grid;
mod kernel;

pub use discretize::{
    discretize_pdp, discretize_reflected_diffusion, empirical_row, total_variation, Discretized,
    PdpModel, ReflectedDiffusion,
};
pub use grid::StateGrid;
pub(crate) use kernel::parse_token;
pub use kernel::{
    build_finite_chain, check_minorization, dyadic_delta, dyadic_ladder, dyadic_level,
    sample_step, square_kernel, MinorizationReport, StepKernel, ROW_SUM_TOLERANCE,
};
