//! Co-interest person detection across temporally synchronized
//! wearable-camera videos.
//!
//! Every frame of every video is a node of a pairwise CRF whose states are
//! the person candidates detected on that frame plus an idle state. Pairs of
//! frames of one video are tied by a location/size consistency energy;
//! synchronized frames of different videos by a view-invariant motion
//! matching energy built from relative optical flow, Hankelets of point
//! trajectories and movement-pattern histograms. Each sliding window is
//! solved with TRW-S and per-frame results are merged by lowest window
//! energy.
//!
//! Modules, bottom-up:
//!
//! - [`dataset`]: on-disk model, loading, IoU, detection files
//! - [`flowfeat`]: frame-based features and their energy
//! - [`trajfeat`]: tracklets, Hankelets, movement-pattern histograms
//! - [`crf`]: window CRF construction and idle energies
//! - [`solver`]: TRW-S and the exhaustive oracle
//! - [`pipeline`]: windows, feature cache, merging, evaluation
//! - [`synth`]: ground-truthed synthetic scenes
//! - [`config`] and [`cli`]: the `cip` command-line front end

pub mod cli;
pub mod config;
pub mod crf;
pub mod dataset;
pub mod error;
pub mod flowfeat;
pub mod pipeline;
pub mod solver;
pub mod synth;
pub mod trajfeat;

pub use error::{Error, Result};
