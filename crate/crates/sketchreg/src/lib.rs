//! sketchreg: randomized sketching, leverage-score sampling, and
//! preconditioned iterative solvers for strongly overdetermined regression.

pub mod error;
pub(crate) mod cpu;
pub mod randstream;
pub mod linalg;
pub mod matrix;
pub mod matrixgen;
pub mod passio;
pub mod sketch;
pub mod leverage;
pub mod precond;
pub mod solve_l2;
pub mod l1core;

pub use error::{Error, Result};
pub use randstream::{derive_stream, RandomStream, SeedSpec};
pub use matrix::DenseMatrix;
pub use passio::{CostLedger, MatrixSource, RowBlock, RowBlockStream, DEFAULT_BLOCK_ROWS};
pub use sketch::{embedding_dim_default, SketchOperator, SketchVariant};
pub use leverage::{
    approx_leverage, exact_leverage, leverage_quality, LeverageEstimate, LeverageMethod,
    LeverageQuality,
};
pub use precond::{
    gaussian_predicted_kappa, lsrn_precond, precond_quality, qr_precond, Preconditioner,
};
pub use solve_l2::{
    chebyshev_semi_iterative, leverage_sample_l2, lsqr, lsrn_solve, sketch_and_solve_l2,
    IterativeKind, SampledProblem, SamplingMode, SolveReport, SolverConfig,
};
pub use l1core::{
    ipm_l1, ipm_l1_detailed, irls_l1, irls_l1_detailed, vertex_certificate, IpmOutcome, L1Form,
    L1Subproblem, VertexCertificate,
};
