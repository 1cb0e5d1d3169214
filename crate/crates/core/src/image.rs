//! In-memory raster images.

use crate::error::{Error, Result};

/// An 8-bit raster with 1 (grayscale) or 3 (RGB) channels.
///
/// Pixel data is stored row-major with channels interleaved, matching the
/// binary PGM/PPM sample order. Statistics treat every channel sample as an
/// independent intensity observation, so layout only matters for I/O.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImagePixels {
    width: u32,
    height: u32,
    channels: u8,
    data: Vec<u8>,
}

impl ImagePixels {
    /// Builds an image, validating that `data` holds exactly
    /// `width * height * channels` samples and that dimensions are non-zero.
    pub fn new(width: u32, height: u32, channels: u8, data: Vec<u8>) -> Result<Self> {
        if !(channels == 1 || channels == 3) {
            return Err(Error::PnmFormat {
                field: "channels",
                reason: format!("expected 1 or 3, got {channels}"),
            });
        }
        if width == 0 || height == 0 {
            return Err(Error::PnmFormat {
                field: "dimensions",
                reason: format!("{width}x{height} has no pixels"),
            });
        }
        let expected = width as usize * height as usize * channels as usize;
        if data.len() != expected {
            return Err(Error::PnmFormat {
                field: "raster",
                reason: format!("expected {expected} samples, got {}", data.len()),
            });
        }
        Ok(Self { width, height, channels, data })
    }

    #[must_use]
    pub fn width(&self) -> u32 {
        self.width
    }

    #[must_use]
    pub fn height(&self) -> u32 {
        self.height
    }

    #[must_use]
    pub fn channels(&self) -> u8 {
        self.channels
    }

    /// All intensity samples in row-major, channel-interleaved order.
    #[must_use]
    pub fn samples(&self) -> &[u8] {
        &self.data
    }

    /// Number of intensity samples (`channels * width * height`).
    #[must_use]
    pub fn sample_count(&self) -> usize {
        self.data.len()
    }
}
