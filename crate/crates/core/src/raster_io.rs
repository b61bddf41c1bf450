//! PRB1 probability rasters and binary foreground masks.
//!
//! Layout: the ASCII line `PRB1`, then `width=`, `height=`, `gsd=`,
//! `origin_x=`, `origin_y=` lines, one empty line, then `width*height`
//! little-endian `f32` values in row-major order, top row first.

use std::fs;
use std::io::Write;
use std::path::Path;
use thiserror::Error;

const MAGIC: &str = "PRB1";

#[derive(Debug, Error)]
pub enum RasterError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed header at byte {offset}: {message}")]
    Header { offset: usize, message: String },
    #[error("expected {expected} values but found {found} (payload starts at byte {offset})")]
    ValueCount {
        offset: usize,
        expected: usize,
        found: usize,
    },
    #[error("value out of range at byte {offset}: {value}")]
    ValueOutOfRange { offset: usize, value: f32 },
    #[error("invalid raster: {0}")]
    Invalid(String),
}

/// Gridded per-pixel target-class probabilities.
///
/// Pixel `(col, row)` covers `[col, col+1] x [row, row+1]` in pixel
/// coordinates, so its center sits at `(col + 0.5, row + 0.5)`. World
/// coordinates are `origin + pixel * gsd` on both axes.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityRaster {
    pub width: u32,
    pub height: u32,
    pub gsd: f64,
    pub origin: (f64, f64),
    pub values: Vec<f32>,
}

impl ProbabilityRaster {
    pub fn new(
        width: u32,
        height: u32,
        gsd: f64,
        origin: (f64, f64),
        values: Vec<f32>,
    ) -> Result<Self, RasterError> {
        let raster = Self {
            width,
            height,
            gsd,
            origin,
            values,
        };
        raster.validate()?;
        Ok(raster)
    }

    pub fn filled(width: u32, height: u32, gsd: f64, value: f32) -> Result<Self, RasterError> {
        Self::new(
            width,
            height,
            gsd,
            (0.0, 0.0),
            vec![value; width as usize * height as usize],
        )
    }

    pub fn validate(&self) -> Result<(), RasterError> {
        if self.width == 0 || self.height == 0 {
            return Err(RasterError::Invalid("width and height must be at least 1".into()));
        }
        if !(self.gsd > 0.0 && self.gsd.is_finite()) {
            return Err(RasterError::Invalid(format!("gsd must be positive, got {}", self.gsd)));
        }
        if !(self.origin.0.is_finite() && self.origin.1.is_finite()) {
            return Err(RasterError::Invalid("origin must be finite".into()));
        }
        let expected = self.width as usize * self.height as usize;
        if self.values.len() != expected {
            return Err(RasterError::Invalid(format!(
                "expected {expected} values, got {}",
                self.values.len()
            )));
        }
        if let Some((i, v)) = self
            .values
            .iter()
            .enumerate()
            .find(|(_, v)| !(0.0..=1.0).contains(*v))
        {
            return Err(RasterError::Invalid(format!("value {v} at index {i} outside [0, 1]")));
        }
        Ok(())
    }

    pub fn get(&self, col: u32, row: u32) -> f32 {
        self.values[row as usize * self.width as usize + col as usize]
    }

    pub fn pixel_to_world(&self, x: f64, y: f64) -> (f64, f64) {
        (self.origin.0 + x * self.gsd, self.origin.1 + y * self.gsd)
    }

    pub fn world_to_pixel(&self, x: f64, y: f64) -> (f64, f64) {
        ((x - self.origin.0) / self.gsd, (y - self.origin.1) / self.gsd)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = format!(
            "{MAGIC}\nwidth={}\nheight={}\ngsd={}\norigin_x={}\norigin_y={}\n\n",
            self.width, self.height, self.gsd, self.origin.0, self.origin.1
        );
        let mut out = Vec::with_capacity(header.len() + 4 * self.values.len());
        out.extend_from_slice(header.as_bytes());
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, RasterError> {
        let mut offset = 0usize;
        let next_line = |offset: &mut usize| -> Result<(usize, String), RasterError> {
            let start = *offset;
            let rel = bytes[start..].iter().position(|&b| b == b'\n').ok_or_else(|| {
                RasterError::Header {
                    offset: start,
                    message: "unterminated header line".into(),
                }
            })?;
            let line = std::str::from_utf8(&bytes[start..start + rel]).map_err(|_| {
                RasterError::Header {
                    offset: start,
                    message: "header is not ASCII".into(),
                }
            })?;
            *offset = start + rel + 1;
            Ok((start, line.to_owned()))
        };

        let (at, magic) = next_line(&mut offset)?;
        if magic != MAGIC {
            return Err(RasterError::Header {
                offset: at,
                message: format!("expected magic {MAGIC:?}, found {magic:?}"),
            });
        }
        let field = |name: &str, offset: &mut usize| -> Result<(usize, String), RasterError> {
            let (at, line) = next_line(offset)?;
            match line.split_once('=') {
                Some((key, value)) if key == name => Ok((at, value.to_owned())),
                _ => Err(RasterError::Header {
                    offset: at,
                    message: format!("expected `{name}=`, found {line:?}"),
                }),
            }
        };
        fn parse<T: std::str::FromStr>(at: usize, name: &str, s: &str) -> Result<T, RasterError> {
            s.parse().map_err(|_| RasterError::Header {
                offset: at,
                message: format!("cannot parse {name} from {s:?}"),
            })
        }
        let (at, s) = field("width", &mut offset)?;
        let width: u32 = parse(at, "width", &s)?;
        let (at, s) = field("height", &mut offset)?;
        let height: u32 = parse(at, "height", &s)?;
        let (at_gsd, s) = field("gsd", &mut offset)?;
        let gsd: f64 = parse(at_gsd, "gsd", &s)?;
        let (at, s) = field("origin_x", &mut offset)?;
        let origin_x: f64 = parse(at, "origin_x", &s)?;
        let (at, s) = field("origin_y", &mut offset)?;
        let origin_y: f64 = parse(at, "origin_y", &s)?;
        let (at, blank) = next_line(&mut offset)?;
        if !blank.is_empty() {
            return Err(RasterError::Header {
                offset: at,
                message: "expected empty line terminating the header".into(),
            });
        }
        if width == 0 || height == 0 {
            return Err(RasterError::Header {
                offset: 0,
                message: "width and height must be at least 1".into(),
            });
        }
        if !(gsd > 0.0 && gsd.is_finite()) {
            return Err(RasterError::Header {
                offset: at_gsd,
                message: format!("gsd must be positive, got {gsd}"),
            });
        }

        let payload = &bytes[offset..];
        let expected = width as usize * height as usize;
        if payload.len() != 4 * expected {
            return Err(RasterError::ValueCount {
                offset,
                expected,
                found: payload.len() / 4,
            });
        }
        let mut values = Vec::with_capacity(expected);
        for (i, chunk) in payload.chunks_exact(4).enumerate() {
            let v = f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]);
            if !(0.0..=1.0).contains(&v) {
                return Err(RasterError::ValueOutOfRange {
                    offset: offset + 4 * i,
                    value: v,
                });
            }
            values.push(v);
        }
        Ok(Self {
            width,
            height,
            gsd,
            origin: (origin_x, origin_y),
            values,
        })
    }
}

pub fn load_raster(path: impl AsRef<Path>) -> Result<ProbabilityRaster, RasterError> {
    ProbabilityRaster::from_bytes(&fs::read(path)?)
}

pub fn save_raster(raster: &ProbabilityRaster, path: impl AsRef<Path>) -> Result<(), RasterError> {
    let mut f = fs::File::create(path)?;
    f.write_all(&raster.to_bytes())?;
    Ok(())
}

/// Foreground mask; `true` marks a foreground pixel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    pub width: u32,
    pub height: u32,
    pub bits: Vec<bool>,
}

impl BinaryMask {
    pub fn new(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            bits: vec![false; width as usize * height as usize],
        }
    }

    pub fn get(&self, col: u32, row: u32) -> bool {
        self.bits[row as usize * self.width as usize + col as usize]
    }

    pub fn set(&mut self, col: u32, row: u32, value: bool) {
        self.bits[row as usize * self.width as usize + col as usize] = value;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    /// Pixel centers of all foreground pixels, row-major.
    pub fn foreground_centers(&self) -> Vec<crate::geometry::Point> {
        let w = self.width as usize;
        self.bits
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(|(i, _)| crate::geometry::Point::new((i % w) as f64 + 0.5, (i / w) as f64 + 0.5))
            .collect()
    }
}

/// Inclusive threshold: a pixel is foreground iff its value is `>= q`.
pub fn threshold_mask(raster: &ProbabilityRaster, q: f64) -> BinaryMask {
    BinaryMask {
        width: raster.width,
        height: raster.height,
        bits: raster.values.iter().map(|&v| f64::from(v) >= q).collect(),
    }
}
