//! Binary PGM (`P5`) and PPM (`P6`) with maxval 255.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::image::{rgb_to_gray, GrayImage, Raster, RgbImage};

struct Header {
    magic: [u8; 2],
    width: usize,
    height: usize,
    data_offset: usize,
}

fn parse_header(bytes: &[u8]) -> Result<Header> {
    if bytes.len() < 2 {
        return Err(Error::Format("file too short for a netpbm header".into()));
    }
    let magic = [bytes[0], bytes[1]];
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in fields.iter_mut() {
        // whitespace and comments between tokens
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while !matches!(bytes.get(pos), None | Some(b'\n') | Some(b'\r')) {
                        pos += 1;
                    }
                }
                _ => break,
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Format(format!("expected a number at byte {start}")));
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Format(format!("header number too large at byte {start}")))?;
    }
    // exactly one whitespace byte after maxval
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err(Error::Format("missing whitespace after maxval".into())),
    }
    let [width, height, maxval] = fields;
    if maxval != 255 {
        return Err(Error::Format(format!(
            "only maxval 255 is supported, got {maxval}"
        )));
    }
    if width == 0 || height == 0 {
        return Err(Error::Format(format!(
            "invalid dimensions {width}x{height}"
        )));
    }
    Ok(Header {
        magic,
        width,
        height,
        data_offset: pos,
    })
}

fn payload(bytes: &[u8], header: &Header, channels: usize) -> Result<Vec<u8>> {
    let len = header.width * header.height * channels;
    let data = &bytes[header.data_offset..];
    if data.len() < len {
        return Err(Error::Format(format!(
            "expected {len} bytes of pixel data, found {}",
            data.len()
        )));
    }
    Ok(data[..len].to_vec())
}

pub fn decode_pgm(bytes: &[u8]) -> Result<GrayImage> {
    let header = parse_header(bytes)?;
    if &header.magic != b"P5" {
        return Err(Error::Format("not a binary PGM (P5) file".into()));
    }
    GrayImage::new(header.width, header.height, payload(bytes, &header, 1)?)
}

pub fn decode_ppm(bytes: &[u8]) -> Result<RgbImage> {
    let header = parse_header(bytes)?;
    if &header.magic != b"P6" {
        return Err(Error::Format("not a binary PPM (P6) file".into()));
    }
    RgbImage::new(header.width, header.height, payload(bytes, &header, 3)?)
}

pub fn encode_pgm(img: &GrayImage) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    out.extend_from_slice(img.data());
    out
}

pub fn encode_ppm(img: &RgbImage) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    out.extend_from_slice(img.data());
    out
}

/// Reads a PGM, or a PPM converted to grayscale.
pub fn read_gray(path: impl AsRef<Path>) -> Result<GrayImage> {
    let bytes = fs::read(path)?;
    match bytes.get(..2) {
        Some(b"P6") => Ok(rgb_to_gray(&decode_ppm(&bytes)?)),
        _ => decode_pgm(&bytes),
    }
}

pub fn write_pgm(path: impl AsRef<Path>, img: &GrayImage) -> Result<()> {
    fs::write(path, encode_pgm(img))?;
    Ok(())
}

pub fn write_ppm(path: impl AsRef<Path>, img: &RgbImage) -> Result<()> {
    fs::write(path, encode_ppm(img))?;
    Ok(())
}
