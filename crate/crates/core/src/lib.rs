//! Bounding-box regression losses of the IoU family, with analytic
//! gradients, a finite-difference oracle, and two analytical experiments (a
//! gradient sweep and an anchor-regression simulation).

pub mod cli;
pub mod error;
pub mod geometry;
pub mod losses;
pub mod numcheck;
pub mod report;
pub mod simulation;

pub use error::{BoxError, Error, Result};
pub use geometry::{iou, make_box, pair_geometry, BBox, PairGeometry};
pub use losses::{
    aspect_penalty_grad, ciou_internals, loss, loss_value, niou_metric, CiouInternals, LossKind,
    LossResult, LossTerms, DEFAULT_N,
};
pub use numcheck::{fd_gradient, run_gradcheck, FdConfig, GradCheckReport};
pub use report::{render_svg, write_csv, CsvTable, PlotSpec};
pub use simulation::{
    gradient_sweep, regression_sim, SimConfig, SimReport, SweepConfig, SweepMode, SweepReport,
};
