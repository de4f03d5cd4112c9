//! Independent oracles for exercising lfdisp-core.
//!
//! Everything here is deliberately written the slow, obvious way and shares
//! no code with the optimized paths it checks: a sextuple-loop reference
//! convolution, scalar-loop loss references, an EPI slope estimator based on
//! cross-correlation, and a classic window-matching disparity baseline.

pub mod conv_ref;
pub mod loss_ref;
pub mod sad_baseline;
pub mod slope;

pub use conv_ref::conv2d_reference;
pub use loss_ref::{loss_grad_reference, loss_mae_reference, loss_normal_reference};
pub use sad_baseline::sad_disparity;
pub use slope::{measure_region_slope, measure_row_slope};
