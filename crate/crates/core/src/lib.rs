//! Smoothed dyadic partitioning (SDP) for discrete conditional distributions.
//!
//! A discrete target space is recursively split into half-spaces; a model
//! outputs one logit per split, and the probability of a cell is the product
//! of the split probabilities on its root-to-leaf path. Training adds a
//! graph trend filtering penalty on the log-masses of a small window around
//! each target, which spreads updates to neighbouring cells.
//!
//! Modules:
//!
//! - [`grid_tree`]: the split tree, path log-likelihoods, full decodes and
//!   windowed gathers.
//! - [`trend_filter`]: sparse k-th order difference operators on grid graphs.
//! - [`heads`]: the six distribution heads (MN, GMM, LMM, UDP, SMN, SDP).
//! - [`nnet`]: dense conditioning network, Adam, and the training loop.
//! - [`synth`]: synthetic ground truths and latent-class tasks.
//! - [`eval`]: total variation, RMSE, held-out log-probability, grid search.
//! - [`dataio`]: CSV ingestion, target discretization, k-fold splits.
//! - [`bench`]: the experiment drivers behind the `sdp-bench` CLI.
//!
//! ```
//! use sdp::{GridShape, Head, HeadKind, HeadSpec};
//!
//! let shape = GridShape::new(vec![32, 32])?;
//! let y = shape.flatten(&[4, 17])?;
//! // lambda, order, radius
//! let head = Head::new(HeadSpec::new(HeadKind::Sdp, shape).with_smoothing(0.1, 2, 3))?;
//! let params = vec![0.0; head.param_count()];
//! assert!((head.log_prob(&params, y)? - (1.0f64 / 1024.0).ln()).abs() < 1e-12);
//! # Ok::<(), sdp::Error>(())
//! ```

pub mod bench;
pub mod dataio;
pub mod distribution;
pub mod error;
pub mod eval;
pub mod grid_tree;
pub mod heads;
pub mod math;
pub mod nnet;
pub mod synth;
pub mod trend_filter;

pub use distribution::DiscreteDistribution;
pub use error::{Error, Result};
pub use grid_tree::{build_layout, neighborhood, DyadicLayout, GridShape, NeighborhoodWindow};
pub use heads::{AxisEmbedding, Head, HeadKind, HeadSpec, Smoothing};
pub use trend_filter::{gtf_operator, incidence, OperatorCache, PenaltyOperator};
