//! Depth frames and sensor-to-network preprocessing.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{Grid, Point};

pub const NATIVE_WIDTH: usize = 640;
pub const NATIVE_HEIGHT: usize = 480;
pub const WORKING_WIDTH: usize = 128;
pub const WORKING_HEIGHT: usize = 96;

#[derive(Debug, Error, PartialEq)]
pub enum DepthError {
    #[error("depth range must be positive, got {0}")]
    InvalidRange(f64),
    #[error("cannot resize {from_w}x{from_h} to {to_w}x{to_h}: not an integer factor")]
    NonIntegerFactor {
        from_w: usize,
        from_h: usize,
        to_w: usize,
        to_h: usize,
    },
    #[error("raw depth has {got} values, expected {expected}")]
    Size { got: usize, expected: usize },
}

/// Sensor output: depth in millimetres, 0 where the sensor has no reading.
#[derive(Debug, Clone, PartialEq)]
pub struct RawDepth {
    pub width: usize,
    pub height: usize,
    pub millimetres: Vec<u16>,
}

impl RawDepth {
    pub fn new(width: usize, height: usize, millimetres: Vec<u16>) -> Result<Self, DepthError> {
        if millimetres.len() != width * height {
            return Err(DepthError::Size {
                got: millimetres.len(),
                expected: width * height,
            });
        }
        Ok(RawDepth {
            width,
            height,
            millimetres,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessConfig {
    /// Depth that maps to 1.0 after normalization.
    pub max_range_mm: f64,
    pub width: usize,
    pub height: usize,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            max_range_mm: 4000.0,
            width: WORKING_WIDTH,
            height: WORKING_HEIGHT,
        }
    }
}

/// Normalized single-channel depth image at working resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthFrame {
    pub depth: Grid<f32>,
    /// Millimetres corresponding to a normalized value of 1.0.
    pub max_range_mm: f64,
    /// Working-resolution pixels per native pixel.
    pub scale: f64,
}

impl DepthFrame {
    pub fn height(&self) -> usize {
        self.depth.height()
    }

    pub fn width(&self) -> usize {
        self.depth.width()
    }
}

/// Area-averaging downsample to working resolution, then divide by the
/// sensor range and clamp to `[0, 1]`.
pub fn preprocess(raw: &RawDepth, cfg: &PreprocessConfig) -> Result<DepthFrame, DepthError> {
    if !(cfg.max_range_mm > 0.0 && cfg.max_range_mm.is_finite()) {
        return Err(DepthError::InvalidRange(cfg.max_range_mm));
    }
    let factor = resize_factor(raw.width, raw.height, cfg.width, cfg.height)?;
    let block = factor as usize;
    let area = (block * block) as f64;
    let depth = Grid::from_fn(cfg.height, cfg.width, |x, y| {
        let mut sum = 0u64;
        for by in 0..block {
            let row = &raw.millimetres[(y * block + by) * raw.width..];
            for bx in 0..block {
                sum += row[x * block + bx] as u64;
            }
        }
        ((sum as f64 / area) / cfg.max_range_mm).clamp(0.0, 1.0) as f32
    });
    Ok(DepthFrame {
        depth,
        max_range_mm: cfg.max_range_mm,
        scale: 1.0 / factor,
    })
}

/// Integer downsampling factor from native to working resolution.
pub fn resize_factor(from_w: usize, from_h: usize, to_w: usize, to_h: usize) -> Result<f64, DepthError> {
    let err = DepthError::NonIntegerFactor {
        from_w,
        from_h,
        to_w,
        to_h,
    };
    if to_w == 0 || to_h == 0 || from_w % to_w != 0 || from_h % to_h != 0 || from_w / to_w != from_h / to_h {
        return Err(err);
    }
    Ok((from_w / to_w) as f64)
}

/// Maps a native-resolution coordinate to working resolution.
pub fn scale_point(p: Point, scale: f64) -> Point {
    p.scale(scale)
}
