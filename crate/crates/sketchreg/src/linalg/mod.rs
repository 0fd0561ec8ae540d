//! Dense linear algebra kernels: GEMM, Householder QR, one-sided Jacobi SVD,
//! Cholesky, triangular solves, and condition-number utilities.

pub mod gemm;
pub mod qr;
pub(crate) mod simdops;
pub mod solve;
pub mod svd;

pub use gemm::{gemm_acc, gemm_acc_tn, gram, kernel_name, matmul, matmul_tn};
pub use qr::{householder_qr, qr_r_only, QrFactors, RANK_DEFICIENCY_THRESHOLD};
pub use solve::{
    back_substitute, cholesky, cholesky_solve, cholesky_solve_in_place, cond2,
    forward_substitute_transposed, kappa_bar_p, min_length_solve, normal_eq_solve,
    trsm_right_rinv, KappaBarEstimate,
};
pub use svd::{jacobi_svd, singular_values, SvdFactors};
