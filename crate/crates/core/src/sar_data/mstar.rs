//! MSTAR Phoenix-format reader and writer.
//!
//! Layout: an ASCII header of `Key= Value` lines bracketed by
//! `[PhoenixHeaderVer ...]` and `[EndofPhoenixHeader]`, followed by the
//! pixel payload as big-endian f32 — one magnitude block, then optionally
//! one phase block of the same size. Files without phase (some chips were
//! distributed magnitude-only) get zero phase.
//!
//! Errors carry the byte offset where parsing failed so corrupt files can
//! be diagnosed with a hex dump.

use super::{SampleMeta, SlcImage, Source};
use crate::error::{Result, SfeError};
use crate::mat::Mat;
use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

const HEADER_END: &str = "[EndofPhoenixHeader]";
/// Guards against absurd allocations from corrupt headers.
const MAX_SIDE: u64 = 1 << 15;

fn fmt_err(offset: u64, msg: impl Into<String>) -> SfeError {
    SfeError::Format { offset, msg: msg.into() }
}

/// Parse the ASCII header. Returns the key/value map and the byte offset
/// of the first payload byte.
fn parse_header(bytes: &[u8], path: &Path) -> Result<(HashMap<String, String>, usize)> {
    // The header is ASCII and newline-terminated; scan line by line so the
    // offset of a malformed line is known exactly.
    let mut map = HashMap::new();
    let mut pos = 0usize;
    while pos < bytes.len() {
        let rest = &bytes[pos..];
        let line_end = rest.iter().position(|&b| b == b'\n').map(|i| pos + i);
        let line_bytes = match line_end {
            Some(e) => &bytes[pos..e],
            None => rest,
        };
        let line = std::str::from_utf8(line_bytes).map_err(|_| {
            fmt_err(pos as u64, format!("{}: non-ASCII header line", path.display()))
        })?;
        let line = line.trim_end_matches('\r');
        if line.trim() == HEADER_END {
            let data_start = match line_end {
                Some(e) => e + 1,
                None => bytes.len(),
            };
            return Ok((map, data_start));
        }
        if let Some((k, v)) = line.split_once('=') {
            map.insert(k.trim().to_string(), v.trim().to_string());
        }
        // Lines without '=' (the opening [PhoenixHeaderVer ...]) are skipped.
        match line_end {
            Some(e) => pos = e + 1,
            None => break,
        }
    }
    Err(fmt_err(
        bytes.len() as u64,
        format!("{}: header terminator `{HEADER_END}` not found", path.display()),
    ))
}

fn header_dim(map: &HashMap<String, String>, key: &str, path: &Path) -> Result<usize> {
    let raw = map
        .get(key)
        .ok_or_else(|| fmt_err(0, format!("{}: missing header key `{key}`", path.display())))?;
    let v: u64 = raw
        .parse()
        .map_err(|_| fmt_err(0, format!("{}: header key `{key}` is not an integer: `{raw}`", path.display())))?;
    if v == 0 || v > MAX_SIDE {
        return Err(fmt_err(0, format!("{}: `{key}` = {v} outside 1..={MAX_SIDE}", path.display())));
    }
    Ok(v as usize)
}

/// Read one big-endian f32 block of `n` values starting at `start`.
fn read_block(bytes: &[u8], start: usize, n: usize, what: &str, path: &Path) -> Result<Vec<f32>> {
    let need = n * 4;
    let have = bytes.len().saturating_sub(start);
    if have < need {
        return Err(fmt_err(
            bytes.len() as u64,
            format!(
                "{}: {what} block truncated: need {need} bytes at offset {start}, file has {have}",
                path.display()
            ),
        ));
    }
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let off = start + i * 4;
        let v = f32::from_be_bytes(bytes[off..off + 4].try_into().unwrap());
        if !v.is_finite() {
            return Err(fmt_err(
                off as u64,
                format!("{}: non-finite {what} value {v}", path.display()),
            ));
        }
        out.push(v);
    }
    Ok(out)
}

/// Ingest a Phoenix-format file into an SLC sample. Magnitude/phase are
/// converted to real/imaginary via `z = m * exp(i * phi)`.
pub fn ingest_mstar(path: &Path) -> Result<SlcImage> {
    let bytes = std::fs::read(path).map_err(|e| SfeError::io(path, e))?;
    let (header, data_start) = parse_header(&bytes, path)?;
    let rows = header_dim(&header, "NumberOfRows", path)?;
    let cols = header_dim(&header, "NumberOfColumns", path)?;
    let n = rows * cols;

    let magnitude = read_block(&bytes, data_start, n, "magnitude", path)?;
    let trailing = bytes.len() - data_start - n * 4;
    let phase = if trailing == 0 {
        vec![0.0f32; n]
    } else if trailing == n * 4 {
        read_block(&bytes, data_start + n * 4, n, "phase", path)?
    } else {
        return Err(fmt_err(
            (data_start + n * 4) as u64,
            format!(
                "{}: trailing {trailing} bytes are neither empty nor a full phase block ({} bytes)",
                path.display(),
                n * 4
            ),
        ));
    };

    let mut real = Mat::zeros(rows, cols);
    let mut imag = Mat::zeros(rows, cols);
    for i in 0..n {
        let (m, p) = (magnitude[i], phase[i]);
        real.as_mut_slice()[i] = m * p.cos();
        imag.as_mut_slice()[i] = m * p.sin();
    }

    let id = path
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "unnamed".into());
    let meta = SampleMeta {
        id,
        class_label: header.get("TargetType").cloned(),
        source: Source::Mstar,
        seed: None,
    };
    SlcImage::new(real, imag, meta)
}

/// Write a Phoenix-format file. Used by the synthetic pipeline's tests and
/// for exporting; `phase = None` writes a magnitude-only file.
pub fn write_mstar(
    path: &Path,
    magnitude: &Mat<f32>,
    phase: Option<&Mat<f32>>,
    target_type: Option<&str>,
) -> Result<()> {
    if let Some(p) = phase {
        if p.shape() != magnitude.shape() {
            return Err(SfeError::InvalidData(format!(
                "phase plane {:?} does not match magnitude {:?}",
                p.shape(),
                magnitude.shape()
            )));
        }
    }
    let mut buf = Vec::new();
    buf.extend_from_slice(b"[PhoenixHeaderVer 0.1]\n");
    let _ = writeln!(buf, "NumberOfRows= {}", magnitude.rows());
    let _ = writeln!(buf, "NumberOfColumns= {}", magnitude.cols());
    if let Some(t) = target_type {
        let _ = writeln!(buf, "TargetType= {t}");
    }
    let _ = writeln!(buf, "{HEADER_END}");
    for &v in magnitude.as_slice() {
        buf.extend_from_slice(&v.to_be_bytes());
    }
    if let Some(p) = phase {
        for &v in p.as_slice() {
            buf.extend_from_slice(&v.to_be_bytes());
        }
    }
    std::fs::write(path, &buf).map_err(|e| SfeError::io(path, e))
}

/// Cheap sniff: does this look like a Phoenix-format file?
pub(crate) fn looks_like_mstar(path: &Path) -> bool {
    let mut head = [0u8; 256];
    let n = match std::fs::File::open(path) {
        Ok(mut f) => std::io::Read::read(&mut f, &mut head).unwrap_or(0),
        Err(_) => return false,
    };
    head[..n].windows(13).any(|w| w == b"PhoenixHeader")
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    #[test]
    fn zero_phase_gives_real_pixels() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("chip.000");
        let mag = Mat::from_vec(2, 2, vec![1.0, 2.0, 3.0, 4.0]);
        write_mstar(&p, &mag, Some(&Mat::zeros(2, 2)), Some("T72")).unwrap();
        let img = ingest_mstar(&p).unwrap();
        assert_eq!(img.real().as_slice(), &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(img.imag().as_slice(), &[0.0; 4]);
        assert_eq!(img.meta.class_label.as_deref(), Some("T72"));
        assert_eq!(img.meta.id, "chip.000");
    }

    #[test]
    fn quarter_turn_phase_rotates_into_imaginary() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("chip.001");
        let mag = Mat::filled(1, 1, 2.0);
        let ph = Mat::filled(1, 1, std::f32::consts::FRAC_PI_2);
        write_mstar(&p, &mag, Some(&ph), None).unwrap();
        let img = ingest_mstar(&p).unwrap();
        assert!(img.real()[(0, 0)].abs() < 1e-6, "cos(pi/2) should vanish");
        assert!((img.imag()[(0, 0)] - 2.0).abs() < 1e-6);
        assert_eq!(img.meta.class_label, None);
    }

    #[test]
    fn magnitude_only_file_gets_zero_phase() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("chip.002");
        write_mstar(&p, &Mat::filled(3, 3, 5.0), None, None).unwrap();
        let img = ingest_mstar(&p).unwrap();
        assert!(img.imag().as_slice().iter().all(|&v| v == 0.0));
        assert!((img.real()[(1, 1)] - 5.0).abs() < 1e-6);
    }

    #[test]
    fn truncated_payload_reports_offset() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("chip.003");
        write_mstar(&p, &Mat::filled(4, 4, 1.0), None, None).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        std::fs::write(&p, &bytes[..bytes.len() - 10]).unwrap();
        match ingest_mstar(&p) {
            Err(SfeError::Format { offset, msg }) => {
                assert_eq!(offset, (bytes.len() - 10) as u64, "offset should be file end");
                assert!(msg.contains("truncated"), "unhelpful message: {msg}");
            }
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn missing_terminator_reports_offset() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("chip.004");
        std::fs::write(&p, b"[PhoenixHeaderVer 0.1]\nNumberOfRows= 2\n").unwrap();
        match ingest_mstar(&p) {
            Err(SfeError::Format { msg, .. }) => assert!(msg.contains("terminator")),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn missing_dims_is_an_error() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("chip.005");
        std::fs::write(&p, b"[PhoenixHeaderVer 0.1]\n[EndofPhoenixHeader]\n").unwrap();
        match ingest_mstar(&p) {
            Err(SfeError::Format { msg, .. }) => assert!(msg.contains("NumberOfRows")),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn round_trip_preserves_magnitude_and_phase() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("chip.006");
        let mag = Mat::from_fn(6, 5, |r, c| 0.5 + (r * 5 + c) as f32 * 0.37);
        // Keep phase in (-pi, pi] so atan2 recovers it uniquely.
        let ph = Mat::from_fn(6, 5, |r, c| -3.0 + (r * 5 + c) as f32 * 0.2);
        write_mstar(&p, &mag, Some(&ph), Some("ZSU_23_4")).unwrap();
        let img = ingest_mstar(&p).unwrap();
        for i in 0..30 {
            let (re, im) = (img.real().as_slice()[i], img.imag().as_slice()[i]);
            let m = (re * re + im * im).sqrt();
            let a = im.atan2(re);
            let rel = (m - mag.as_slice()[i]).abs() / mag.as_slice()[i];
            assert!(rel < 1e-6, "magnitude {i} drifted by {rel}");
            assert!((a - ph.as_slice()[i]).abs() < 1e-5, "phase {i}: {a} vs {}", ph.as_slice()[i]);
        }
    }

    #[test]
    fn sniffer_recognizes_headers() {
        let dir = tempdir().unwrap();
        let yes = dir.path().join("yes.000");
        write_mstar(&yes, &Mat::filled(2, 2, 1.0), None, None).unwrap();
        assert!(looks_like_mstar(&yes));
        let no = dir.path().join("no.txt");
        std::fs::write(&no, b"just text").unwrap();
        assert!(!looks_like_mstar(&no));
    }
}
