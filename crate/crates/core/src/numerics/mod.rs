//! Dense linear algebra, reverse-mode differentiation, optimizers and the
//! loss primitives the rest of the crate builds on. Everything here is a
//! pure function of its inputs; no randomness is consumed.

pub mod autodiff;
pub mod linalg;
pub mod losses;
pub mod optim;
pub mod tensor;

pub use autodiff::{clamped_exp, grad, sigmoid, softplus, Graph, Unary, Var, EXP_CLAMP};
pub use linalg::{gram_schmidt, pca_project, symmetric_eigen, Orthonormalized, Projection};
pub use losses::{
    focal_loss, focal_loss_node, gaussian_kl, gaussian_kl_node, FocalLoss, FocalParams,
    IGNORE_LABEL, PROB_CLIP,
};
pub use optim::{LrSchedule, OptimizerKind, OptimizerState};
pub use tensor::{Gradients, ParamSet, Tensor};
