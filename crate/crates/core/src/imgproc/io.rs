//! PGM (P5, 8-bit) and PFM (Pf, float32) readers and writers.
//!
//! PGM stores intensity as `round(value * 255)`; loading maps back with
//! `byte / 255`. PFM follows the usual convention: little-endian float32
//! (negative scale field) with scanlines stored bottom-up.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{GrayImage, ImgError};

pub fn save_pgm(img: &GrayImage, path: &Path) -> Result<(), ImgError> {
    let mut w = BufWriter::new(File::create(path)?);
    write!(w, "P5\n{} {}\n255\n", img.width(), img.height())?;
    let bytes: Vec<u8> = img
        .data()
        .iter()
        .map(|&x| (x.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    w.write_all(&bytes)?;
    Ok(())
}

pub fn load_pgm(path: &Path) -> Result<GrayImage, ImgError> {
    let mut r = BufReader::new(File::open(path)?);
    let mut contents = Vec::new();
    r.read_to_end(&mut contents)?;
    let mut header = HeaderScanner::new(&contents);
    let magic = header.token()?;
    if magic != b"P5" {
        return Err(ImgError::BadFormat(format!(
            "expected P5 magic, got {:?}",
            String::from_utf8_lossy(magic)
        )));
    }
    let width: usize = header.parse_token()?;
    let height: usize = header.parse_token()?;
    let maxval: usize = header.parse_token()?;
    if maxval != 255 {
        return Err(ImgError::BadFormat(format!(
            "only maxval 255 supported, got {maxval}"
        )));
    }
    let pixels = header.rest();
    if pixels.len() < width * height {
        return Err(ImgError::BadFormat("truncated PGM pixel data".into()));
    }
    let data = pixels[..width * height]
        .iter()
        .map(|&b| b as f64 / 255.0)
        .collect();
    GrayImage::new(width, height, data)
}

pub fn save_pfm(img: &GrayImage, path: &Path) -> Result<(), ImgError> {
    let mut w = BufWriter::new(File::create(path)?);
    write!(w, "Pf\n{} {}\n-1.0\n", img.width(), img.height())?;
    // Bottom-up scanline order.
    for v in (0..img.height()).rev() {
        for u in 0..img.width() {
            w.write_all(&(img.at(u, v) as f32).to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn load_pfm(path: &Path) -> Result<GrayImage, ImgError> {
    let mut r = BufReader::new(File::open(path)?);
    let mut contents = Vec::new();
    r.read_to_end(&mut contents)?;
    let mut header = HeaderScanner::new(&contents);
    let magic = header.token()?;
    if magic != b"Pf" {
        return Err(ImgError::BadFormat(format!(
            "expected Pf magic, got {:?}",
            String::from_utf8_lossy(magic)
        )));
    }
    let width: usize = header.parse_token()?;
    let height: usize = header.parse_token()?;
    let scale: f64 = header.parse_token()?;
    if scale >= 0.0 {
        return Err(ImgError::BadFormat(
            "big-endian PFM not supported (scale must be negative)".into(),
        ));
    }
    let bytes = header.rest();
    if bytes.len() < width * height * 4 {
        return Err(ImgError::BadFormat("truncated PFM pixel data".into()));
    }
    let mut data = vec![0.0f64; width * height];
    for v in 0..height {
        let row = height - 1 - v; // stored bottom-up
        for u in 0..width {
            let off = (v * width + u) * 4;
            let bits = [bytes[off], bytes[off + 1], bytes[off + 2], bytes[off + 3]];
            data[row * width + u] = f32::from_le_bytes(bits) as f64;
        }
    }
    GrayImage::new(width, height, data)
}

/// Minimal whitespace/comment-aware scanner over a netpbm-style header.
struct HeaderScanner<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> HeaderScanner<'a> {
    fn new(buf: &'a [u8]) -> Self {
        HeaderScanner { buf, pos: 0 }
    }

    fn token(&mut self) -> Result<&'a [u8], ImgError> {
        loop {
            while self.pos < self.buf.len() && self.buf[self.pos].is_ascii_whitespace() {
                self.pos += 1;
            }
            if self.pos < self.buf.len() && self.buf[self.pos] == b'#' {
                while self.pos < self.buf.len() && self.buf[self.pos] != b'\n' {
                    self.pos += 1;
                }
                continue;
            }
            break;
        }
        let start = self.pos;
        while self.pos < self.buf.len() && !self.buf[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(ImgError::BadFormat("unexpected end of header".into()));
        }
        Ok(&self.buf[start..self.pos])
    }

    fn parse_token<T: std::str::FromStr>(&mut self) -> Result<T, ImgError> {
        let tok = self.token()?;
        std::str::from_utf8(tok)
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| {
                ImgError::BadFormat(format!(
                    "bad header token {:?}",
                    String::from_utf8_lossy(tok)
                ))
            })
    }

    /// Pixel payload: everything after the single whitespace byte that
    /// terminates the header.
    fn rest(&mut self) -> &'a [u8] {
        self.pos += 1;
        &self.buf[self.pos.min(self.buf.len())..]
    }
}
