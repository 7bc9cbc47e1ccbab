//! Non-neural pipeline for 3D compressible turbulence super-resolution:
//! volumetric I/O, Favre coarsening with subgrid stress, a tricubic baseline,
//! physics-aware metrics, cube-symmetry augmentation, dataset subsampling and
//! training losses.

pub mod augment;
pub mod cli;
pub mod coarsen;
pub mod error;
pub mod field;
pub mod io;
pub mod loss;
pub mod metrics;
pub mod subsample;
pub mod tricubic;

pub use coarsen::{favre_filter, sgs_stress, FilterSpec, SgsTensorField};
pub use error::{Error, ErrorCode, Result};
pub use field::{Axis, ChannelStats, FlowState, GridSpec, ScalarField3D};
pub use metrics::{evaluate_pair, MetricReport, SsimConfig};
pub use tricubic::{flops, upsample, upsample_state, FlopsMode};
