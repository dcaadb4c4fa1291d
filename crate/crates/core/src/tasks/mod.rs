//! Application programs: generative modelling with optimized latents,
//! inverse problems, adversarial attacks and training, and meta-learning.

pub mod adversarial;
pub mod data;
pub mod generative;
pub mod meta;
pub mod model;

pub use data::{blobs, linreal_tasks, spirals, Dataset, MetaTask, Provenance, TaskFamily};
pub use generative::{
    fit_diag_gaussian, fit_latent, fit_latent_warm, sample_posthoc, solve_inverse_unsup, train_generative,
    train_inverse_sup, FitResult,
};
pub use model::{psnr, train_loop, ItemGrad, Model, ParamOptimizer, TrainConfig, TrainOutcome, TrainRow};
pub use adversarial::{
    adv_train, attack, classify, jiio_attack, one_hot, robust_eval, Adversary, ClassifierConfig,
};
pub use meta::{meta_inner_solve, meta_input, meta_query_loss_grad, meta_train, MetaConfig, MetaInnerSolution};
