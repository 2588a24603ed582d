pub mod color_ops;
pub mod encoder;
pub mod error;
pub mod fixtures;
pub mod imaging;
pub mod losses;
pub mod lut;
pub mod nn;
pub mod pipeline;
pub mod predictor;
pub mod training;

pub use color_ops::{apply_params, apply_pointwise, grade_video, GradingParams};
pub use error::{Error, Result};
pub use imaging::{RgbImage, VideoFrames};
