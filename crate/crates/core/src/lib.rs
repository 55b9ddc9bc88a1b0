//! Quantized rigid-body-dynamics laboratory.
//!
//! The crate hosts the full stack: a URDF-ingesting robot model, fixed-point
//! arithmetic, scalar-generic dynamics kernels (inverse/forward dynamics,
//! analytical mass-matrix inverse with division deferring, derivatives),
//! controller templates, a closed-loop quantization simulator with error
//! analysis and compensation, the precision search driver, and an analytical
//! resource/performance model of the target accelerator.

pub mod control;
pub mod fixtures;
pub mod fxp;
pub mod hw;
pub mod kernels;
pub mod model;
pub mod scalar;
pub mod search;
pub mod sim;
pub mod spatial;

pub use control::{ControlError, ControllerConfig};
pub use fxp::{quantize, FxpError, FxpFormat, FxpStats, FxpValue};
pub use hw::{
    control_rate, count_macs, divider_count, estimate_perf, plan_pipeline, DspCostTable,
    DspFamily, HwError, MinvAlgo, PipelinePlan, RbdFunction, UnitProfile,
};
pub use kernels::{Binding, DynDerivatives, JointState, KernelError, MinvWorkspace};
pub use model::{parse_urdf, JointKind, ModelError, RobotModel};
pub use scalar::{Dual, KernelModule, OpCounts, PassDir, Scalar, Sym, Track, UnitId};
pub use search::{search, QuantReport, SearchConstraints, SearchError};
pub use sim::{
    analyze_errors, fit_compensation, rollout_pair, CompensationParams, ErrorStats, SimConfig,
    SimError, TrajectoryPair,
};
pub use spatial::{spatial_cross, CrossKind, Mat6, SpatialVec, Xform};
