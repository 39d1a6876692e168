//! Numerical laboratory for symmetric jump processes on graphs.

pub mod conditions;
pub mod error;
pub mod harnack;
pub mod io;
pub mod linalg;
pub mod model;
pub mod montecarlo;
pub mod semigroup;

pub use error::{Error, Result};
pub use model::{
    BoundaryMode, FiniteModel, KernelSpec, LatticeModel, LatticeSpec, MeasureRule, Metric, ModelConstants,
    ModelDescription, ModelSettings, RowRegion, RowSum, TruncateOptions, Vertex,
};
pub use conditions::{ConditionReport, FittedConstant, SweepGrid, Threshold, Witness};
pub use harnack::{HarnackBox, HarnackReport};
pub use io::{Cell, Table};
pub use montecarlo::{EstimateReport, TrajectorySampler};
pub use semigroup::{CaloricField, ExteriorSchedule, HeatKernelResult, Source, TimeGrid};
