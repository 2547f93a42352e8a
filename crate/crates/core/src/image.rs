//! 8-bit RGB images and the binary Netpbm formats used on disk
//! (P6 for colour, P5 for grayscale maps).

use std::fs;
use std::path::Path;

use crate::error::{Result, XaiError};

/// Row-major interleaved RGB.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageU8 {
    height: usize,
    width: usize,
    data: Vec<u8>,
}

impl ImageU8 {
    pub fn new(height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(XaiError::Argument(format!(
                "image dimensions must be positive, got {height}×{width}"
            )));
        }
        if data.len() != height * width * 3 {
            return Err(XaiError::Argument(format!(
                "{height}×{width} RGB image needs {} bytes, got {}",
                height * width * 3,
                data.len()
            )));
        }
        Ok(ImageU8 {
            height,
            width,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, rgb: [u8; 3]) -> Self {
        let data = rgb
            .iter()
            .copied()
            .cycle()
            .take(height * width * 3)
            .collect();
        ImageU8 {
            height,
            width,
            data,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixel_count(&self) -> usize {
        self.height * self.width
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn pixel(&self, y: usize, x: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set_pixel(&mut self, y: usize, x: usize, rgb: [u8; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn to_ppm(&self) -> Vec<u8> {
        self.to_ppm_with_comment(None)
    }

    /// P6 bytes, optionally with a single `#` comment line after the magic.
    pub fn to_ppm_with_comment(&self, comment: Option<&str>) -> Vec<u8> {
        let mut out = b"P6\n".to_vec();
        if let Some(c) = comment {
            for line in c.lines() {
                out.extend_from_slice(format!("# {line}\n").as_bytes());
            }
        }
        out.extend_from_slice(format!("{} {}\n255\n", self.width, self.height).as_bytes());
        out.extend_from_slice(&self.data);
        out
    }

    pub fn from_ppm(bytes: &[u8]) -> Result<Self> {
        let mut r = HeaderReader { bytes, pos: 0 };
        r.magic(b"P6")?;
        let width = r.number()?;
        let height = r.number()?;
        let maxval = r.number()?;
        if maxval != 255 {
            return Err(XaiError::Format {
                offset: r.pos,
                detail: format!("only maxval 255 is supported, got {maxval}"),
            });
        }
        r.single_whitespace()?;
        let need = width * height * 3;
        let body = &bytes[r.pos..];
        if body.len() < need {
            return Err(XaiError::Format {
                offset: bytes.len(),
                detail: format!(
                    "pixel data truncated: need {need} bytes, have {}",
                    body.len()
                ),
            });
        }
        ImageU8::new(height, width, body[..need].to_vec()).map_err(|e| XaiError::Format {
            offset: 0,
            detail: e.to_string(),
        })
    }

    pub fn read_ppm(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| XaiError::io(path, e))?;
        Self::from_ppm(&bytes)
    }

    pub fn write_ppm(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_ppm()).map_err(|e| XaiError::io(path, e))
    }
}

/// P5 bytes with maxval 255.
pub fn pgm8(height: usize, width: usize, values: &[u8]) -> Vec<u8> {
    debug_assert_eq!(values.len(), height * width);
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(values);
    out
}

/// P5 bytes with maxval 65535; samples are big-endian as Netpbm requires.
pub fn pgm16(height: usize, width: usize, values: &[u16]) -> Vec<u8> {
    debug_assert_eq!(values.len(), height * width);
    let mut out = format!("P5\n{width} {height}\n65535\n").into_bytes();
    for v in values {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out
}

/// Parses a P5 file with any maxval up to 65535. Returns
/// `(height, width, maxval, samples)`.
pub fn parse_pgm(bytes: &[u8]) -> Result<(usize, usize, u16, Vec<u16>)> {
    let mut r = HeaderReader { bytes, pos: 0 };
    r.magic(b"P5")?;
    let width = r.number()?;
    let height = r.number()?;
    let maxval = r.number()?;
    if maxval == 0 || maxval > 65535 {
        return Err(XaiError::Format {
            offset: r.pos,
            detail: format!("maxval {maxval} out of range"),
        });
    }
    r.single_whitespace()?;
    let wide = maxval > 255;
    let need = width * height * if wide { 2 } else { 1 };
    let body = &bytes[r.pos..];
    if body.len() < need {
        return Err(XaiError::Format {
            offset: bytes.len(),
            detail: format!(
                "sample data truncated: need {need} bytes, have {}",
                body.len()
            ),
        });
    }
    let samples = if wide {
        body[..need]
            .chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]))
            .collect()
    } else {
        body[..need].iter().map(|&v| v as u16).collect()
    };
    Ok((height, width, maxval as u16, samples))
}

struct HeaderReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl HeaderReader<'_> {
    fn magic(&mut self, expect: &[u8]) -> Result<()> {
        if !self.bytes.starts_with(expect) {
            return Err(XaiError::Format {
                offset: 0,
                detail: format!("expected magic {}", String::from_utf8_lossy(expect)),
            });
        }
        self.pos = expect.len();
        Ok(())
    }

    fn skip_space_and_comments(&mut self) {
        while self.pos < self.bytes.len() {
            match self.bytes[self.pos] {
                b'#' => {
                    while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                c if c.is_ascii_whitespace() => self.pos += 1,
                _ => break,
            }
        }
    }

    fn number(&mut self) -> Result<usize> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or(XaiError::Format {
                offset: start,
                detail: "expected a decimal header field".into(),
            })
    }

    fn single_whitespace(&mut self) -> Result<()> {
        match self.bytes.get(self.pos) {
            Some(c) if c.is_ascii_whitespace() => {
                self.pos += 1;
                Ok(())
            }
            _ => Err(XaiError::Format {
                offset: self.pos,
                detail: "expected whitespace before raster".into(),
            }),
        }
    }
}
