//! Global digital image correlation on convolution finite elements.
//!
//! Given a reference and a deformed grayscale speckle image, the crate
//! recovers a full-field displacement (and derived strain) by minimizing the
//! linearized optical-flow residual over a regular quadrilateral mesh. The
//! element approximation is either classical bilinear Q4 / serendipity Q8, or
//! a convolution finite element whose shape functions compose FE hat
//! functions with smooth radial-basis patch interpolants, giving arbitrarily
//! high approximation order on a linear mesh without extra degrees of
//! freedom.
//!
//! The main entry point is [`dic::run_dic`]; synthetic benchmark inputs come
//! from [`synth`], and [`metrics`] evaluates accuracy (RMSE, relative L2) and
//! resolution (spatial/measurement resolution and their product).

pub mod error;
pub mod evaluate;
pub mod kernel;
pub mod mesh;
pub mod metrics;
pub mod post;
pub mod cli;
pub mod dic;
pub mod gray;
pub mod quad;
pub mod sparse;
pub mod shape;
pub mod spline;
pub mod synth;

pub use error::{Error, Result};
