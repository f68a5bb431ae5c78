//! File formats: `FSKT` baseband tensors, `FSKC` correlation fields, PFM
//! float images and ASCII PLY point clouds.
//!
//! `FSKT` layout (little-endian): magic `FSKT`, `u32` version (1), `u32`
//! T, R, F, then `T·R·F` complex64 values (`f32` real, `f32` imaginary) in
//! `(t, r, k)` row-major order.
//!
//! `FSKC` layout: magic `FSKC`, `u32` version (1), `u32` H, W, F, four `f64`
//! (extent x, extent y, center x, center y), then `H·W·F` complex64 values
//! in `(v, u, k)` order; invalid pixels hold NaN.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use num_complex::Complex64;

use crate::correlate::{CorrelationField, GridGeometry};
use crate::error::{Error, Result};
use crate::signal::{BasebandTensor, Vec3};

pub const FSKT_MAGIC: &[u8; 4] = b"FSKT";
pub const FSKC_MAGIC: &[u8; 4] = b"FSKC";
pub const FORMAT_VERSION: u32 = 1;

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    Ok(BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(File::open(path).map_err(|e| Error::io(path, e))?))
}

fn finish(path: &Path, mut w: BufWriter<File>) -> Result<()> {
    w.flush().map_err(|e| Error::io(path, e))
}

fn read_u32(r: &mut impl Read, path: &Path) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(|_| Error::format(path, "truncated header"))?;
    Ok(u32::from_le_bytes(b))
}

fn read_f64(r: &mut impl Read, path: &Path) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b).map_err(|_| Error::format(path, "truncated header"))?;
    Ok(f64::from_le_bytes(b))
}

fn read_header(r: &mut impl Read, path: &Path, magic: &[u8; 4]) -> Result<(usize, usize, usize)> {
    let mut m = [0u8; 4];
    r.read_exact(&mut m).map_err(|_| Error::format(path, "file too short"))?;
    if &m != magic {
        return Err(Error::format(path, format!("bad magic {:?}, expected {:?}", m, std::str::from_utf8(magic).unwrap())));
    }
    let version = read_u32(r, path)?;
    if version != FORMAT_VERSION {
        return Err(Error::format(path, format!("unsupported version {version}")));
    }
    Ok((read_u32(r, path)? as usize, read_u32(r, path)? as usize, read_u32(r, path)? as usize))
}

fn write_complex(w: &mut impl Write, c: Complex64) -> std::io::Result<()> {
    w.write_all(&(c.re as f32).to_le_bytes())?;
    w.write_all(&(c.im as f32).to_le_bytes())
}

fn read_complex_block(r: &mut impl Read, path: &Path, n: usize) -> Result<Vec<Complex64>> {
    let mut buf = vec![0u8; n.checked_mul(8).ok_or_else(|| Error::format(path, "dimensions overflow"))?];
    r.read_exact(&mut buf).map_err(|_| Error::format(path, format!("expected {n} complex values")))?;
    let mut rest = [0u8; 1];
    if r.read(&mut rest).map_err(|e| Error::io(path, e))? != 0 {
        return Err(Error::format(path, "trailing bytes after payload"));
    }
    Ok(buf
        .chunks_exact(8)
        .map(|c| {
            let re = f32::from_le_bytes([c[0], c[1], c[2], c[3]]);
            let im = f32::from_le_bytes([c[4], c[5], c[6], c[7]]);
            Complex64::new(re as f64, im as f64)
        })
        .collect())
}

pub fn write_fskt(path: &Path, tensor: &BasebandTensor) -> Result<()> {
    let mut w = create(path)?;
    let (t, r, f) = tensor.dims();
    let io = |e| Error::io(path, e);
    w.write_all(FSKT_MAGIC).map_err(io)?;
    for v in [FORMAT_VERSION, t as u32, r as u32, f as u32] {
        w.write_all(&v.to_le_bytes()).map_err(io)?;
    }
    for c in tensor.data() {
        write_complex(&mut w, *c).map_err(io)?;
    }
    finish(path, w)
}

pub fn read_fskt(path: &Path) -> Result<BasebandTensor> {
    let mut r = open(path)?;
    let (t, rx, f) = read_header(&mut r, path, FSKT_MAGIC)?;
    let n = t.checked_mul(rx).and_then(|v| v.checked_mul(f)).ok_or_else(|| Error::format(path, "dimensions overflow"))?;
    let data = read_complex_block(&mut r, path, n)?;
    BasebandTensor::new(t, rx, f, data).map_err(|e| Error::format(path, e.to_string()))
}

pub fn write_fskc(path: &Path, field: &CorrelationField) -> Result<()> {
    let mut w = create(path)?;
    let g = &field.geometry;
    let io = |e| Error::io(path, e);
    w.write_all(FSKC_MAGIC).map_err(io)?;
    for v in [FORMAT_VERSION, g.height as u32, g.width as u32, field.freq_count as u32] {
        w.write_all(&v.to_le_bytes()).map_err(io)?;
    }
    for v in [g.extent[0], g.extent[1], g.center[0], g.center[1]] {
        w.write_all(&v.to_le_bytes()).map_err(io)?;
    }
    for (i, c) in field.data.iter().enumerate() {
        let c = if field.valid[i / field.freq_count] { *c } else { Complex64::new(f64::NAN, f64::NAN) };
        write_complex(&mut w, c).map_err(io)?;
    }
    finish(path, w)
}

pub fn read_fskc(path: &Path) -> Result<CorrelationField> {
    let mut r = open(path)?;
    let (h, w, f) = read_header(&mut r, path, FSKC_MAGIC)?;
    let extent = [read_f64(&mut r, path)?, read_f64(&mut r, path)?];
    let center = [read_f64(&mut r, path)?, read_f64(&mut r, path)?];
    let geometry = GridGeometry::new(w, h, extent, center).map_err(|e| Error::format(path, e.to_string()))?;
    let n = h.checked_mul(w).and_then(|v| v.checked_mul(f)).ok_or_else(|| Error::format(path, "dimensions overflow"))?;
    if f == 0 {
        return Err(Error::format(path, "zero frequencies"));
    }
    let data = read_complex_block(&mut r, path, n)?;
    let valid = (0..h * w).map(|i| data[i * f..(i + 1) * f].iter().all(|c| !c.re.is_nan())).collect();
    Ok(CorrelationField { geometry, freq_count: f, data, valid })
}

/// Single-channel float image in PFM storage order: the first row is the
/// bottom of the image.
#[derive(Clone, Debug, PartialEq)]
pub struct Pfm {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

pub fn write_pfm(path: &Path, width: usize, height: usize, bottom_up: &[f64]) -> Result<()> {
    if bottom_up.len() != width * height {
        return Err(Error::Dimension(format!("PFM payload has {} values for {width}x{height}", bottom_up.len())));
    }
    let mut w = create(path)?;
    let io = |e| Error::io(path, e);
    write!(w, "Pf\n{width} {height}\n-1.0\n").map_err(io)?;
    for v in bottom_up {
        w.write_all(&(*v as f32).to_le_bytes()).map_err(io)?;
    }
    finish(path, w)
}

pub fn read_pfm(path: &Path) -> Result<Pfm> {
    let mut r = open(path)?;
    let mut line = String::new();
    let mut next_line = |r: &mut BufReader<File>| -> Result<String> {
        line.clear();
        r.read_line(&mut line).map_err(|e| Error::io(path, e))?;
        Ok(line.trim().to_string())
    };
    let kind = next_line(&mut r)?;
    if kind != "Pf" {
        let why = if kind == "PF" { "color PFM is not supported".to_string() } else { format!("bad PFM magic `{kind}`") };
        return Err(Error::format(path, why));
    }
    let dims = next_line(&mut r)?;
    let mut it = dims.split_whitespace().map(|s| s.parse::<usize>());
    let (width, height) = match (it.next(), it.next(), it.next()) {
        (Some(Ok(w)), Some(Ok(h)), None) if w > 0 && h > 0 => (w, h),
        _ => return Err(Error::format(path, format!("bad PFM dimensions `{dims}`"))),
    };
    let scale: f64 = next_line(&mut r)?.parse().map_err(|_| Error::format(path, "bad PFM scale"))?;
    if scale == 0.0 || !scale.is_finite() {
        return Err(Error::format(path, "bad PFM scale"));
    }
    let mut buf = vec![0u8; width * height * 4];
    r.read_exact(&mut buf).map_err(|_| Error::format(path, "truncated PFM payload"))?;
    let data = buf
        .chunks_exact(4)
        .map(|b| {
            let b = [b[0], b[1], b[2], b[3]];
            if scale < 0.0 {
                f32::from_le_bytes(b)
            } else {
                f32::from_be_bytes(b)
            }
        })
        .collect();
    Ok(Pfm { width, height, data })
}

/// ASCII PLY with `x y z magnitude` per vertex.
pub fn write_ply(path: &Path, points: &[(Vec3, f64)]) -> Result<()> {
    let mut w = create(path)?;
    let io = |e| Error::io(path, e);
    write!(
        w,
        "ply\nformat ascii 1.0\nelement vertex {}\nproperty double x\nproperty double y\nproperty double z\nproperty double magnitude\nend_header\n",
        points.len()
    )
    .map_err(io)?;
    for (p, m) in points {
        writeln!(w, "{} {} {} {}", p[0], p[1], p[2], m).map_err(io)?;
    }
    finish(path, w)
}

/// Read the vertices of an ASCII PLY file; the first three vertex
/// properties are taken as coordinates and a fourth, if present, as the
/// scalar.
pub fn read_ply(path: &Path) -> Result<Vec<(Vec3, f64)>> {
    let r = open(path)?;
    let mut lines = r.lines();
    let mut next = || -> Result<Option<String>> {
        lines.next().transpose().map_err(|e| Error::io(path, e))
    };
    if next()?.as_deref().map(str::trim) != Some("ply") {
        return Err(Error::format(path, "missing `ply` magic"));
    }
    let mut count = None;
    let mut in_vertex = false;
    let mut props = 0;
    loop {
        let line = next()?.ok_or_else(|| Error::format(path, "missing end_header"))?;
        let toks: Vec<&str> = line.split_whitespace().collect();
        match toks.as_slice() {
            ["format", f, ..] if *f != "ascii" => return Err(Error::format(path, "only ASCII PLY is supported")),
            ["element", "vertex", n] => {
                count = Some(n.parse::<usize>().map_err(|_| Error::format(path, "bad vertex count"))?);
                in_vertex = true;
            }
            ["element", ..] => in_vertex = false,
            ["property", ..] if in_vertex => props += 1,
            ["end_header"] => break,
            _ => {}
        }
    }
    let count = count.ok_or_else(|| Error::format(path, "no vertex element"))?;
    if props < 3 {
        return Err(Error::format(path, "vertex element needs x, y, z"));
    }
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        let line = next()?.ok_or_else(|| Error::format(path, format!("expected {count} vertices, got {i}")))?;
        let vals: std::result::Result<Vec<f64>, _> = line.split_whitespace().map(str::parse::<f64>).collect();
        let vals = vals.map_err(|_| Error::format(path, format!("bad vertex line {}", i + 1)))?;
        if vals.len() < 3 {
            return Err(Error::format(path, format!("vertex {} has {} values", i + 1, vals.len())));
        }
        out.push(([vals[0], vals[1], vals[2]], vals.get(3).copied().unwrap_or(0.0)));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    #[test]
    fn fskt_round_trip() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("a.fskt");
        let data: Vec<Complex64> = (0..24).map(|i| Complex64::new(i as f64 * 0.5, -(i as f64) * 0.25)).collect();
        let t = BasebandTensor::new(2, 3, 4, data).unwrap();
        write_fskt(&path, &t).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(&bytes[..4], b"FSKT");
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 2);
        assert_eq!(bytes.len(), 20 + 24 * 8);
        assert_eq!(read_fskt(&path).unwrap(), t);
    }

    #[test]
    fn fskt_rejects_corruption() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("bad.fskt");
        std::fs::write(&path, b"FSKX\x01\0\0\0").unwrap();
        assert!(matches!(read_fskt(&path), Err(Error::Format { .. })));
        let t = BasebandTensor::zeros(1, 1, 2);
        write_fskt(&path, &t).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes.pop();
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(read_fskt(&path), Err(Error::Format { .. })));
        assert!(matches!(read_fskt(&dir.path().join("missing.fskt")), Err(Error::Io { .. })));
    }

    #[test]
    fn fskc_round_trip() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("c.fskc");
        let geometry = GridGeometry::new(3, 2, [0.01, 0.005], [0.0, 0.001]).unwrap();
        let mut data: Vec<Complex64> = (0..12).map(|i| Complex64::new(0.1 * i as f64, 0.5)).collect();
        data[2] = Complex64::new(f64::NAN, f64::NAN);
        data[3] = Complex64::new(f64::NAN, f64::NAN);
        let valid = vec![true, false, true, true, true, true];
        let field = CorrelationField { geometry, freq_count: 2, data, valid: valid.clone() };
        write_fskc(&path, &field).unwrap();
        let back = read_fskc(&path).unwrap();
        assert_eq!(back.geometry, geometry);
        assert_eq!(back.valid, valid);
        assert!((back.get(5, 1) - field.get(5, 1)).norm() < 1e-6);
    }

    #[test]
    fn pfm_round_trip() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("d.pfm");
        let vals = vec![0.25, f64::NAN, 1.5, -2.0, 0.0, 3.0];
        write_pfm(&path, 3, 2, &vals).unwrap();
        let text = std::fs::read(&path).unwrap();
        assert!(text.starts_with(b"Pf\n3 2\n-1.0\n"));
        let p = read_pfm(&path).unwrap();
        assert_eq!((p.width, p.height), (3, 2));
        assert!(p.data[1].is_nan());
        assert_eq!(p.data[5], 3.0);
        assert!(write_pfm(&path, 2, 2, &vals).is_err());
    }

    #[test]
    fn ply_round_trip() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("p.ply");
        let pts = vec![([0.1, -0.2, 0.3], 0.5), ([1e-3, 2.0, 0.31], 0.0)];
        write_ply(&path, &pts).unwrap();
        assert_eq!(read_ply(&path).unwrap(), pts);
    }
}
