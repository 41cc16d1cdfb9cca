//! In-memory raster types and Netpbm (PPM/PGM) readers and writers.
//!
//! Frames are stored as interleaved 8-bit RGB and written as binary PPM
//! (`P6`). Segmentation masks and descriptor patches use binary PGM (`P5`)
//! with the class codes from [`crate::color::ColorClass`] as pixel values.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ImageIoError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: expected magic {expected:?}, found {found:?}")]
    BadMagic {
        path: PathBuf,
        expected: String,
        found: String,
    },
    #[error("{path}: malformed header: {reason}")]
    BadHeader { path: PathBuf, reason: String },
    #[error("{path}: file truncated (expected {expected} pixel bytes, got {got})")]
    Truncated {
        path: PathBuf,
        expected: usize,
        got: usize,
    },
}

impl ImageIoError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        ImageIoError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

/// Interleaved 8-bit RGB image.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RgbImage {
    width: u32,
    height: u32,
    data: Vec<u8>,
}

impl RgbImage {
    pub fn filled(width: u32, height: u32, rgb: [u8; 3]) -> Self {
        let n = width as usize * height as usize;
        let data = rgb.repeat(n);
        RgbImage {
            width,
            height,
            data,
        }
    }

    pub fn from_raw(width: u32, height: u32, data: Vec<u8>) -> Option<Self> {
        if data.len() != width as usize * height as usize * 3 {
            return None;
        }
        Some(RgbImage {
            width,
            height,
            data,
        })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> [u8; 3] {
        let i = (y as usize * self.width as usize + x as usize) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn put(&mut self, x: u32, y: u32, rgb: [u8; 3]) {
        let i = (y as usize * self.width as usize + x as usize) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.data
    }

    pub fn as_bytes_mut(&mut self) -> &mut [u8] {
        &mut self.data
    }
}

/// Writes a binary PPM (`P6`, maxval 255).
pub fn write_ppm(image: &RgbImage, path: &Path) -> Result<(), ImageIoError> {
    let file = File::create(path).map_err(|e| ImageIoError::io(path, e))?;
    let mut w = BufWriter::new(file);
    let write = |w: &mut BufWriter<File>| -> std::io::Result<()> {
        write!(w, "P6\n{} {}\n255\n", image.width, image.height)?;
        w.write_all(&image.data)?;
        w.flush()
    };
    write(&mut w).map_err(|e| ImageIoError::io(path, e))
}

/// Reads a binary PPM (`P6`, maxval 255).
pub fn read_ppm(path: &Path) -> Result<RgbImage, ImageIoError> {
    let (width, height, data) = read_pnm(path, "P6", 3)?;
    Ok(RgbImage {
        width,
        height,
        data,
    })
}

/// Single-channel 8-bit raster used for segmentation label maps.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GrayImage {
    width: u32,
    height: u32,
    data: Vec<u8>,
}

impl GrayImage {
    pub fn from_raw(width: u32, height: u32, data: Vec<u8>) -> Option<Self> {
        if data.len() != width as usize * height as usize {
            return None;
        }
        Some(GrayImage {
            width,
            height,
            data,
        })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.data
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.data
    }
}

/// Writes a binary PGM (`P5`, maxval 255).
pub fn write_pgm(image: &GrayImage, path: &Path) -> Result<(), ImageIoError> {
    let file = File::create(path).map_err(|e| ImageIoError::io(path, e))?;
    let mut w = BufWriter::new(file);
    let write = |w: &mut BufWriter<File>| -> std::io::Result<()> {
        write!(w, "P5\n{} {}\n255\n", image.width, image.height)?;
        w.write_all(&image.data)?;
        w.flush()
    };
    write(&mut w).map_err(|e| ImageIoError::io(path, e))
}

/// Reads a binary PGM (`P5`, maxval 255).
pub fn read_pgm(path: &Path) -> Result<GrayImage, ImageIoError> {
    let (width, height, data) = read_pnm(path, "P5", 1)?;
    Ok(GrayImage {
        width,
        height,
        data,
    })
}

/// Shared P5/P6 reader: magic, whitespace/comment tolerant header, raw bytes.
fn read_pnm(
    path: &Path,
    magic: &str,
    channels: usize,
) -> Result<(u32, u32, Vec<u8>), ImageIoError> {
    let file = File::open(path).map_err(|e| ImageIoError::io(path, e))?;
    let mut r = BufReader::new(file);
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)
        .map_err(|e| ImageIoError::io(path, e))?;

    if bytes.len() < 2 || &bytes[..2] != magic.as_bytes() {
        let found = String::from_utf8_lossy(&bytes[..bytes.len().min(2)]).into_owned();
        return Err(ImageIoError::BadMagic {
            path: path.to_path_buf(),
            expected: magic.to_string(),
            found,
        });
    }

    let mut pos = 2;
    let mut fields = [0u32; 3];
    for field in fields.iter_mut() {
        *field = parse_header_int(path, &bytes, &mut pos)?;
    }
    let (width, height, maxval) = (fields[0], fields[1], fields[2]);
    if maxval != 255 {
        return Err(ImageIoError::BadHeader {
            path: path.to_path_buf(),
            reason: format!("unsupported maxval {maxval}"),
        });
    }
    // Exactly one whitespace byte separates the header from the raster.
    pos += 1;

    let expected = width as usize * height as usize * channels;
    let got = bytes.len().saturating_sub(pos);
    if got < expected {
        return Err(ImageIoError::Truncated {
            path: path.to_path_buf(),
            expected,
            got,
        });
    }
    Ok((width, height, bytes[pos..pos + expected].to_vec()))
}

fn parse_header_int(path: &Path, bytes: &[u8], pos: &mut usize) -> Result<u32, ImageIoError> {
    // Skip whitespace and '#' comment lines.
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
        } else {
            break;
        }
    }
    let start = *pos;
    while *pos < bytes.len() && bytes[*pos].is_ascii_digit() {
        *pos += 1;
    }
    if start == *pos {
        return Err(ImageIoError::BadHeader {
            path: path.to_path_buf(),
            reason: "expected integer field".to_string(),
        });
    }
    std::str::from_utf8(&bytes[start..*pos])
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| ImageIoError::BadHeader {
            path: path.to_path_buf(),
            reason: "integer field out of range".to_string(),
        })
}
