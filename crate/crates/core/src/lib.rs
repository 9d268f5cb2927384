//! Statistical toolkit for comparing the collective behaviour of two
//! collections of financial time series.
//!
//! The pipeline runs from calendar-aligned [`PricePanel`]s through log
//! returns to:
//!
//! - rolling correlation eigenspectra and the dynamics deviation between
//!   two collections ([`spectra`]),
//! - distribution change points found with a Kolmogorov–Smirnov change point
//!   model ([`changepoint`]),
//! - pairwise trajectory, breaks, extremes and total-return matrices
//!   ([`distances`]),
//! - Kendall-tau anomaly persistence matrices ([`persistence`]),
//! - agglomerative clustering of any of the above ([`cluster`]).

pub mod changepoint;
pub mod cluster;
pub mod distances;
mod error;
pub mod ingest;
pub mod matrix;
pub mod persistence;
pub mod returns;
pub mod rng;
pub mod spectra;
pub mod stats;

pub use changepoint::{BreakSet, CalibrationKind, CalibrationSpec, ThresholdCache, ThresholdTable};
pub use cluster::{Dendrogram, Linkage, Merge};
pub use distances::{AffinityMatrix, DistanceKind, DistanceMatrix, TailMeasure};
pub use error::{Error, Result};
pub use ingest::{AlignmentPolicy, PeriodPartition, PricePanel, Segment};
pub use persistence::PersistenceMatrix;
pub use returns::{ReturnsPanel, RiskAdjustedSeries};
pub use spectra::{CorrelationMatrix, Eigendecomposition, EigenspectrumSurface};
