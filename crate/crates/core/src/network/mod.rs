//! Layered networks with concatenation and skip wiring, nonnegativity
//! constraints for input convexity, and randomized convexity certifiers.
//!
//! A network maps `z^1 = x` through layers
//! `z^{k+1} = act_k(W_k zhat^k + A_k z^{j_k} + b_k)` where `zhat^k` is `z^k`
//! or the channel concatenation of an earlier `z^{i_k}` with `z^k`.

mod checkpoint;
mod convexity;
mod exec;
mod params;
pub mod random;
mod regularizer;
mod spec;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, NCKPT_MAGIC, NCKPT_VERSION};
pub use convexity::{check_componentwise_convex, check_uniformly_convex, ConvexityReport, MidpointSampler, Witness};
pub use exec::{batch_statistics, finalize_bn, forward, forward_on_graph, is_finalized, BnRecord, Mode, Tracking};
pub use params::{init_params, min_constrained, project_convex, ConstraintPlan, Param, ParamSet};
pub use regularizer::{make_uniformly_convex, Regularizer};
pub use spec::{param_id, Activation, Bias, LayerSpec, Linear, NetworkSpec, Skip};
