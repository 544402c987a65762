//! Set-of-features to single-vector poolers and normalizers, each with
//! analytic gradients where the training loop or the gradient checker
//! needs them.

pub mod cbp;
pub mod netvlad;
pub mod norm;
pub mod pca;
pub mod sketch;

pub use cbp::{bilinear_pool_exact, cbp_pool, cbp_pool_backward};
pub use netvlad::{
    kmeans, netvlad_pool, netvlad_pool_backward, netvlad_pool_forward, NetVladGrads,
    NetVladParams, NetVladTape,
};
pub use norm::{
    l2_normalize, l2_normalize_backward, l2_normalize_with_norm, power_normalize,
    power_normalize_grad,
};
pub use pca::{pca_fit, pca_transform, symmetric_eig, PcaModel};
pub use sketch::{count_sketch, SketchParams};
