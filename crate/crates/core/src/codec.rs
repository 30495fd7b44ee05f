//! File formats: binary PGM/PPM images, the FTEN raw tensor format, and
//! all-or-nothing output staging.
//!
//! FTEN v1 is an ASCII header line `FTEN <H> <W> <C>\n` followed by
//! `H * W * C` little-endian IEEE-754 `f32` values in row-major order.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{GfaError, Result};
use crate::tensor::FeatureMap;

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| GfaError::io(path, e))
}

struct HeaderReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> HeaderReader<'a> {
    fn skip_space_and_comments(&mut self) {
        while self.pos < self.bytes.len() {
            match self.bytes[self.pos] {
                b'#' => {
                    while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                b if b.is_ascii_whitespace() => self.pos += 1,
                _ => break,
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<usize> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(GfaError::parse(start, format!("expected {what}")));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| GfaError::parse(start, format!("{what} out of range")))
    }
}

struct PnmHeader {
    magic: [u8; 2],
    width: usize,
    height: usize,
    maxval: usize,
    data_start: usize,
}

fn parse_pnm_header(bytes: &[u8]) -> Result<PnmHeader> {
    if bytes.len() < 2 {
        return Err(GfaError::parse(0, "file too short for a PNM magic number"));
    }
    let magic = [bytes[0], bytes[1]];
    if &magic != b"P5" && &magic != b"P6" {
        return Err(GfaError::parse(0, "expected binary PGM (P5) or PPM (P6) magic"));
    }
    let mut r = HeaderReader { bytes, pos: 2 };
    let width = r.number("width")?;
    let height = r.number("height")?;
    let maxval = r.number("maxval")?;
    if r.pos >= bytes.len() || !bytes[r.pos].is_ascii_whitespace() {
        return Err(GfaError::parse(r.pos, "expected a single whitespace byte after maxval"));
    }
    if width == 0 || height == 0 {
        return Err(GfaError::parse(2, "image dimensions must be positive"));
    }
    Ok(PnmHeader {
        magic,
        width,
        height,
        maxval,
        data_start: r.pos + 1,
    })
}

/// Decodes 8-bit P5/P6 data into values `byte / 255` (one or three channels).
pub fn decode_image(bytes: &[u8]) -> Result<FeatureMap> {
    let hdr = parse_pnm_header(bytes)?;
    if hdr.maxval != 255 {
        return Err(GfaError::parse(
            hdr.data_start - 1,
            format!("unsupported maxval {}, only 255 is accepted", hdr.maxval),
        ));
    }
    let channels = if &hdr.magic == b"P6" { 3 } else { 1 };
    let len = hdr.width * hdr.height * channels;
    let payload = &bytes[hdr.data_start..];
    if payload.len() < len {
        return Err(GfaError::parse(
            bytes.len(),
            format!("truncated payload: expected {len} bytes, found {}", payload.len()),
        ));
    }
    if payload.len() > len {
        return Err(GfaError::parse(hdr.data_start + len, "trailing bytes after payload"));
    }
    let data = payload.iter().map(|&b| f32::from(b) / 255.0).collect();
    FeatureMap::new(hdr.height, hdr.width, channels, data)
}

pub fn read_image(path: &Path) -> Result<FeatureMap> {
    decode_image(&read_file(path)?)
}

/// Encodes a one- or three-channel map as P5/P6, clamping to `[0, 1]` and
/// rounding `v * 255`.
pub fn encode_image(f: &FeatureMap) -> Result<Vec<u8>> {
    let magic = match f.channels() {
        1 => "P5",
        3 => "P6",
        c => {
            return Err(GfaError::config(format!(
                "only 1- or 3-channel maps can be written as images, got {c}"
            )))
        }
    };
    let mut out = format!("{magic}\n{} {}\n255\n", f.width(), f.height()).into_bytes();
    out.extend(
        f.data()
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8),
    );
    Ok(out)
}

/// 16-bit big-endian P5 with maxval 65535.
pub fn encode_pgm16(height: usize, width: usize, values: &[u16]) -> Result<Vec<u8>> {
    if values.len() != height * width {
        return Err(GfaError::config(format!(
            "{} samples for a {height}x{width} image",
            values.len()
        )));
    }
    let mut out = format!("P5\n{width} {height}\n65535\n").into_bytes();
    for v in values {
        out.extend_from_slice(&v.to_be_bytes());
    }
    Ok(out)
}

/// Reads a 16-bit P5 back as `(height, width, samples)`.
pub fn decode_pgm16(bytes: &[u8]) -> Result<(usize, usize, Vec<u16>)> {
    let hdr = parse_pnm_header(bytes)?;
    if &hdr.magic != b"P5" || hdr.maxval != 65535 {
        return Err(GfaError::parse(0, "expected a 16-bit P5 image"));
    }
    let payload = &bytes[hdr.data_start..];
    let len = hdr.width * hdr.height * 2;
    if payload.len() != len {
        return Err(GfaError::parse(
            bytes.len(),
            format!("expected {len} payload bytes, found {}", payload.len()),
        ));
    }
    let values = payload
        .chunks_exact(2)
        .map(|b| u16::from_be_bytes([b[0], b[1]]))
        .collect();
    Ok((hdr.height, hdr.width, values))
}

const FTEN_MAGIC: &str = "FTEN";

pub fn encode_tensor(f: &FeatureMap) -> Vec<u8> {
    let mut out =
        format!("{FTEN_MAGIC} {} {} {}\n", f.height(), f.width(), f.channels()).into_bytes();
    out.reserve(f.data().len() * 4);
    for v in f.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_tensor(bytes: &[u8]) -> Result<FeatureMap> {
    let nl = bytes
        .iter()
        .take(256)
        .position(|&b| b == b'\n')
        .ok_or_else(|| GfaError::parse(0, "missing FTEN header line"))?;
    let header = std::str::from_utf8(&bytes[..nl])
        .map_err(|_| GfaError::parse(0, "FTEN header is not ASCII"))?;
    let fields: Vec<&str> = header.split(' ').collect();
    if fields.len() != 4 || fields[0] != FTEN_MAGIC {
        return Err(GfaError::parse(0, format!("bad FTEN header {header:?}")));
    }
    let mut dims = [0usize; 3];
    let mut offset = FTEN_MAGIC.len() + 1;
    for (d, field) in dims.iter_mut().zip(&fields[1..]) {
        *d = field
            .parse()
            .ok()
            .filter(|&v: &usize| v >= 1 && field.bytes().all(|b| b.is_ascii_digit()))
            .ok_or_else(|| GfaError::parse(offset, format!("bad dimension {field:?}")))?;
        offset += field.len() + 1;
    }
    let [h, w, c] = dims;
    let count = h
        .checked_mul(w)
        .and_then(|n| n.checked_mul(c))
        .ok_or_else(|| GfaError::parse(5, "dimensions overflow"))?;
    let payload = &bytes[nl + 1..];
    if payload.len() != count * 4 {
        return Err(GfaError::parse(
            nl + 1 + payload.len().min(count * 4),
            format!(
                "payload length {} does not match {h}x{w}x{c} f32 values ({} bytes)",
                payload.len(),
                count * 4
            ),
        ));
    }
    let data: Vec<f32> = payload
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    if let Some(k) = data.iter().position(|v| !v.is_finite()) {
        return Err(GfaError::parse(nl + 1 + 4 * k, "non-finite value"));
    }
    FeatureMap::new(h, w, c, data)
}

pub fn read_tensor(path: &Path) -> Result<FeatureMap> {
    decode_tensor(&read_file(path)?)
}

/// Reads FTEN, P5 or P6 by sniffing the magic bytes.
pub fn read_feature_input(path: &Path) -> Result<FeatureMap> {
    let bytes = read_file(path)?;
    if bytes.starts_with(FTEN_MAGIC.as_bytes()) {
        decode_tensor(&bytes)
    } else {
        decode_image(&bytes)
    }
}

/// Output files that are either all written or none are.
///
/// Contents are staged in temporaries next to their targets and renamed into
/// place only after every temporary was written successfully.
#[derive(Default)]
pub struct OutputSet {
    files: Vec<(PathBuf, Vec<u8>)>,
}

impl OutputSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, path: impl Into<PathBuf>, contents: Vec<u8>) {
        self.files.push((path.into(), contents));
    }

    pub fn is_empty(&self) -> bool {
        self.files.is_empty()
    }

    pub fn commit(self) -> Result<()> {
        let mut staged = Vec::with_capacity(self.files.len());
        for (path, contents) in self.files {
            let dir = match path.parent() {
                Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
                _ => PathBuf::from("."),
            };
            let mut tmp = tempfile::NamedTempFile::new_in(&dir).map_err(|e| GfaError::io(&dir, e))?;
            tmp.write_all(&contents)
                .and_then(|_| tmp.flush())
                .map_err(|e| GfaError::io(&path, e))?;
            staged.push((tmp, path));
        }
        for (tmp, path) in staged {
            tmp.persist(&path).map_err(|e| GfaError::io(&path, e.error))?;
        }
        Ok(())
    }
}
