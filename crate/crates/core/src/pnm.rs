//! Binary PGM (`P5`) and PPM (`P6`) decoding and encoding.
//!
//! Only the 8-bit binary variants are supported: `maxval` must be exactly
//! 255. Headers may contain `#` comments anywhere whitespace is allowed,
//! per the netpbm grammar. Decoding is strict — a truncated raster or a
//! malformed header is an error naming the offending field, never a
//! silently padded image.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::image::ImagePixels;

/// Reads header tokens (magic, width, height, maxval), skipping whitespace
/// and `#` comments, and returns the offset of the first raster byte.
struct HeaderCursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> HeaderCursor<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    fn skip_separators(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b.is_ascii_whitespace() {
                self.pos += 1;
            } else if b == b'#' {
                while let Some(&c) = self.bytes.get(self.pos) {
                    self.pos += 1;
                    if c == b'\n' {
                        break;
                    }
                }
            } else {
                break;
            }
        }
    }

    fn token(&mut self, field: &'static str) -> Result<&'a [u8]> {
        self.skip_separators();
        let start = self.pos;
        while let Some(&b) = self.bytes.get(self.pos) {
            if b.is_ascii_whitespace() || b == b'#' {
                break;
            }
            self.pos += 1;
        }
        if self.pos == start {
            return Err(Error::PnmFormat { field, reason: "missing token".into() });
        }
        Ok(&self.bytes[start..self.pos])
    }

    fn number(&mut self, field: &'static str) -> Result<u32> {
        let tok = self.token(field)?;
        let text = std::str::from_utf8(tok).map_err(|_| Error::PnmFormat {
            field,
            reason: "token is not ASCII".into(),
        })?;
        text.parse().map_err(|_| Error::PnmFormat {
            field,
            reason: format!("expected an unsigned integer, got {text:?}"),
        })
    }
}

/// Decodes a binary PGM or PPM byte stream.
pub fn decode(bytes: &[u8]) -> Result<ImagePixels> {
    let mut cur = HeaderCursor::new(bytes);
    let magic = cur.token("magic")?;
    let channels: u8 = match magic {
        b"P5" => 1,
        b"P6" => 3,
        other => {
            return Err(Error::PnmFormat {
                field: "magic",
                reason: format!("expected P5 or P6, got {:?}", String::from_utf8_lossy(other)),
            })
        }
    };
    let width = cur.number("width")?;
    let height = cur.number("height")?;
    let maxval = cur.number("maxval")?;
    if maxval != 255 {
        return Err(Error::PnmFormat {
            field: "maxval",
            reason: format!("only 255 is supported, got {maxval}"),
        });
    }
    // Exactly one whitespace byte separates the header from the raster.
    match bytes.get(cur.pos) {
        Some(b) if b.is_ascii_whitespace() => cur.pos += 1,
        _ => {
            return Err(Error::PnmFormat {
                field: "raster",
                reason: "missing whitespace byte after maxval".into(),
            })
        }
    }
    let expected = width as usize * height as usize * channels as usize;
    let raster = &bytes[cur.pos..];
    if raster.len() < expected {
        return Err(Error::PnmFormat {
            field: "raster",
            reason: format!("expected {expected} bytes, got {}", raster.len()),
        });
    }
    if raster.len() > expected {
        return Err(Error::PnmFormat {
            field: "raster",
            reason: format!("{} trailing bytes after the raster", raster.len() - expected),
        });
    }
    ImagePixels::new(width, height, channels, raster.to_vec())
}

/// Reads and decodes a PGM/PPM file.
pub fn read_file(path: &Path) -> Result<ImagePixels> {
    let bytes = fs::read(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    decode(&bytes)
}

/// Encodes an image as binary PGM (1 channel) or PPM (3 channels).
#[must_use]
pub fn encode(image: &ImagePixels) -> Vec<u8> {
    let magic = if image.channels() == 1 { "P5" } else { "P6" };
    let mut out = format!("{magic}\n{} {}\n255\n", image.width(), image.height()).into_bytes();
    out.extend_from_slice(image.samples());
    out
}

/// Encodes and writes an image to `path`.
pub fn write_file(path: &Path, image: &ImagePixels) -> Result<()> {
    fs::write(path, encode(image)).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decodes_minimal_pgm() {
        let img = decode(b"P5 2 2 255\n\x00\x40\x80\xff").unwrap();
        assert_eq!(img.width(), 2);
        assert_eq!(img.height(), 2);
        assert_eq!(img.channels(), 1);
        assert_eq!(img.samples(), &[0x00, 0x40, 0x80, 0xff]);
    }

    #[test]
    fn decodes_ppm_with_comments() {
        let img = decode(b"P6 # rgb\n# another comment\n1 2\n255\nabcdef").unwrap();
        assert_eq!(img.channels(), 3);
        assert_eq!(img.samples(), b"abcdef");
    }

    #[test]
    fn rejects_wrong_magic() {
        let err = decode(b"P4 1 1 255\n\x00").unwrap_err();
        assert!(err.to_string().contains("magic"), "{err}");
    }

    #[test]
    fn rejects_maxval_other_than_255() {
        let err = decode(b"P5 1 1 65535\n\x00\x00").unwrap_err();
        assert!(err.to_string().contains("maxval"), "{err}");
    }

    #[test]
    fn rejects_truncated_raster() {
        let err = decode(b"P5 2 2 255\n\x00\x01").unwrap_err();
        assert!(err.to_string().contains("raster"), "{err}");
    }

    #[test]
    fn rejects_trailing_bytes() {
        let err = decode(b"P5 1 1 255\n\x00extra").unwrap_err();
        assert!(err.to_string().contains("trailing"), "{err}");
    }

    #[test]
    fn rejects_non_numeric_dimension() {
        let err = decode(b"P5 two 2 255\n\x00\x00").unwrap_err();
        assert!(err.to_string().contains("width"), "{err}");
    }

    #[test]
    fn round_trips_through_encode() {
        let img = ImagePixels::new(3, 1, 3, vec![9, 8, 7, 6, 5, 4, 3, 2, 1]).unwrap();
        let decoded = decode(&encode(&img)).unwrap();
        assert_eq!(decoded, img);
    }
}
