//! Heat kernel, exit-time and chain-metric tools for random walks on finite
//! metric measure graphs with sub-Gaussian scaling.

pub mod chain;
pub mod dirichlet;
pub mod error;
pub mod exit;
pub mod heat;
pub mod linalg;
pub mod report;
pub mod scale;
pub mod space;
pub mod stats;
pub mod verify;

pub use chain::{ChainResult, EpsilonSolution};
pub use dirichlet::{DirichletForm, Domain, DomainSolver};
pub use error::{Error, Result};
pub use heat::{HeatKernelGrid, KernelMethod, Spectral, Uniformized};
pub use report::{Condition, ConditionReport, Stability, StabilityOutcome, Trend, Verdict, Window};
pub use scale::{ExitTimeFit, PhiLowerBound, ProfilePoint, Regularity, ScaleFunction};
pub use space::{Ball, Edge, MetricMeasureGraph, VolumeReport, VolumeSample};
pub use exit::{ExitTimeStats, MCConfig, McStats};
pub use verify::{EquivConfig, EstimateReport, KernelSample, SampleConfig, SampleRow};
