//! Distributed-lag estimation of the generalised dynamic factor model.
//!
//! The estimators are generic over [`Scalar`]; the aliases below fix the
//! two supported precisions.

// `!(x > y)` comparisons deliberately treat NaN as failing the check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod decomposition;
pub mod eigen;
pub mod error;
pub mod inference;
pub mod lag_design;
pub mod lasso;
pub mod monte_carlo;
pub mod panel;
pub mod scalar;
pub mod simulator;

pub use decomposition::{variance_shares, Decomposition, ShareRow};
pub use eigen::{extract_factors, principal_factors, FactorEstimate, PcMap, SymEigen};
pub use error::{ErrorClass, GdfmError, Result};
pub use inference::{infer, weak_factor_test, Bandwidth, InferenceResult, PValueMode, WeakFactorOutcome};
pub use lag_design::{apply_mask, build_lag_matrix, ColumnLabel, LagBasis, SelectedDesign, SelectionMask};
pub use lasso::{CalibrationResult, CalibrationSettings, FinalSelection, LassoFit, LassoOptions, RollingCalibrator};
pub use panel::{Layout, LoadedPanel, Panel, SeriesMeta, TCode};
pub use scalar::Scalar;
pub use simulator::{ModelSpec, RealizedModel, SimulatedPanel, StateSpaceModel};

pub type Panel64 = Panel<f64>;
pub type Panel32 = Panel<f32>;
pub type FactorEstimate64 = FactorEstimate<f64>;
pub type FactorEstimate32 = FactorEstimate<f32>;
pub type LagBasis64 = LagBasis<f64>;
pub type LagBasis32 = LagBasis<f32>;
pub type LassoFit64 = LassoFit<f64>;
pub type LassoFit32 = LassoFit<f32>;
pub type InferenceResult64 = InferenceResult<f64>;
pub type InferenceResult32 = InferenceResult<f32>;
pub type Decomposition64 = Decomposition<f64>;
pub type Decomposition32 = Decomposition<f32>;
