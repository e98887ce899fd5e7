//! Region-wise trajectory and motion-mask conditioning for image-to-video
//! motion control, with a CPU toy conditioned denoiser, preview rendering,
//! trajectory-alignment metrics and camera-motion conversion.

pub mod camproj;
pub mod condition;
pub mod error;
pub mod grid;
pub mod io;
pub mod metrics;
pub mod modulate;
pub mod pipeline;
pub mod propagate;
pub mod synth;
pub mod tracks;

pub use error::{Error, Result};
