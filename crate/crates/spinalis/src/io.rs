//! SVOL volume files and binary PGM slice export.
//!
//! SVOL layout: one text line `SVOL1 {json}` with keys
//! `width,height,depth,sx,sy,sz,dtype`, a newline, then the raw payload
//! little-endian, row-major, x fastest. Intensities are f32, masks u8.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{MaskVolume, Slice, Volume};

const MAGIC: &str = "SVOL1";

#[derive(Debug, Serialize, Deserialize)]
struct SvolHeader {
    width: usize,
    height: usize,
    depth: usize,
    sx: f64,
    sy: f64,
    sz: f64,
    dtype: String,
}

fn read_header(reader: &mut impl Read, path: &Path) -> Result<SvolHeader> {
    let mut line = Vec::new();
    let mut byte = [0u8; 1];
    loop {
        let n = reader.read(&mut byte)?;
        if n == 0 {
            return Err(Error::Format(format!(
                "{}: unexpected end of file before header newline",
                path.display()
            )));
        }
        if byte[0] == b'\n' {
            break;
        }
        line.push(byte[0]);
        if line.len() > 4096 {
            return Err(Error::Format(format!("{}: header line too long", path.display())));
        }
    }
    let line = String::from_utf8(line)
        .map_err(|_| Error::Format(format!("{}: header is not valid UTF-8", path.display())))?;
    let rest = line
        .strip_prefix(MAGIC)
        .and_then(|r| r.strip_prefix(' '))
        .ok_or_else(|| Error::Format(format!("{}: missing SVOL1 magic", path.display())))?;
    let header: SvolHeader = serde_json::from_str(rest)
        .map_err(|e| Error::Format(format!("{}: bad header JSON: {e}", path.display())))?;
    if header.width == 0 || header.height == 0 || header.depth == 0 {
        return Err(Error::Format(format!("{}: zero dimension in header", path.display())));
    }
    for s in [header.sx, header.sy, header.sz] {
        if !s.is_finite() || s <= 0.0 {
            return Err(Error::Format(format!("{}: non-finite or non-positive spacing", path.display())));
        }
    }
    Ok(header)
}

fn write_header(w: &mut impl Write, header: &SvolHeader) -> Result<()> {
    let json = serde_json::to_string(header)
        .map_err(|e| Error::Format(format!("header serialization failed: {e}")))?;
    writeln!(w, "{MAGIC} {json}")?;
    Ok(())
}

fn read_exact_payload(reader: &mut impl Read, len: usize, path: &Path) -> Result<Vec<u8>> {
    let mut payload = Vec::new();
    reader.read_to_end(&mut payload)?;
    if payload.len() != len {
        return Err(Error::Format(format!(
            "{}: payload length {} does not match header ({} bytes expected)",
            path.display(),
            payload.len(),
            len
        )));
    }
    Ok(payload)
}

/// Load an f32 intensity volume.
pub fn load_volume(path: impl AsRef<Path>) -> Result<Volume> {
    let path = path.as_ref();
    let mut reader = BufReader::new(File::open(path)?);
    let header = read_header(&mut reader, path)?;
    if header.dtype != "f32" {
        return Err(Error::Format(format!(
            "{}: expected dtype f32 for a volume, got {}",
            path.display(),
            header.dtype
        )));
    }
    let n = header.width * header.height * header.depth;
    let payload = read_exact_payload(&mut reader, n * 4, path)?;
    let mut data = Vec::with_capacity(n);
    for chunk in payload.chunks_exact(4) {
        data.push(f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]));
    }
    Volume::new(header.width, header.height, header.depth, [header.sx, header.sy, header.sz], data)
}

/// Save an f32 intensity volume; `load_volume` round-trips it bit-exactly.
pub fn save_volume(v: &Volume, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = BufWriter::new(File::create(path)?);
    let [sx, sy, sz] = v.spacing();
    write_header(
        &mut w,
        &SvolHeader {
            width: v.width(),
            height: v.height(),
            depth: v.depth(),
            sx,
            sy,
            sz,
            dtype: "f32".to_string(),
        },
    )?;
    for v in v.data() {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

/// Load a u8 label volume.
pub fn load_mask(path: impl AsRef<Path>) -> Result<MaskVolume> {
    let path = path.as_ref();
    let mut reader = BufReader::new(File::open(path)?);
    let header = read_header(&mut reader, path)?;
    if header.dtype != "u8" {
        return Err(Error::Format(format!(
            "{}: expected dtype u8 for a mask, got {}",
            path.display(),
            header.dtype
        )));
    }
    let n = header.width * header.height * header.depth;
    let payload = read_exact_payload(&mut reader, n, path)?;
    MaskVolume::new(
        header.width,
        header.height,
        header.depth,
        [header.sx, header.sy, header.sz],
        payload,
    )
}

pub fn save_mask(m: &MaskVolume, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = BufWriter::new(File::create(path)?);
    let [sx, sy, sz] = m.spacing();
    write_header(
        &mut w,
        &SvolHeader {
            width: m.width(),
            height: m.height(),
            depth: m.depth(),
            sx,
            sy,
            sz,
            dtype: "u8".to_string(),
        },
    )?;
    w.write_all(m.labels())?;
    w.flush()?;
    Ok(())
}

/// Export a slice as binary PGM (P5, maxval 255), quantizing [0,1] linearly.
pub fn save_pgm(s: &Slice, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path.as_ref())?);
    write!(w, "P5\n{} {}\n255\n", s.width(), s.height())?;
    let bytes: Vec<u8> = s
        .data()
        .iter()
        .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    w.write_all(&bytes)?;
    w.flush()?;
    Ok(())
}

/// Import a binary PGM written by `save_pgm`, mapping 0..=255 back to [0,1].
pub fn load_pgm(path: impl AsRef<Path>) -> Result<Slice> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    BufReader::new(File::open(path)?).read_to_end(&mut bytes)?;
    let mut fields = Vec::new();
    let mut pos = 0;
    // P5 header: magic, width, height, maxval, single whitespace, payload.
    while fields.len() < 4 && pos < bytes.len() {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        fields.push(
            std::str::from_utf8(&bytes[start..pos])
                .map_err(|_| Error::Format(format!("{}: bad PGM header", path.display())))?
                .to_string(),
        );
    }
    if fields.len() != 4 || fields[0] != "P5" {
        return Err(Error::Format(format!("{}: not a binary PGM", path.display())));
    }
    let width: usize = fields[1]
        .parse()
        .map_err(|_| Error::Format(format!("{}: bad PGM width", path.display())))?;
    let height: usize = fields[2]
        .parse()
        .map_err(|_| Error::Format(format!("{}: bad PGM height", path.display())))?;
    if fields[3] != "255" {
        return Err(Error::Format(format!("{}: PGM maxval must be 255", path.display())));
    }
    pos += 1; // single whitespace after maxval
    let payload = &bytes[pos..];
    if payload.len() != width * height {
        return Err(Error::Format(format!(
            "{}: PGM payload length {} does not match {width}x{height}",
            path.display(),
            payload.len()
        )));
    }
    let data = payload.iter().map(|b| *b as f32 / 255.0).collect();
    Slice::new(width, height, data, 0)
}
