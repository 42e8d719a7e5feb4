//! PGM images with a JSON sidecar for the value range and spacing, CSV
//! tables, and the overwrite guard shared by every writer.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::grid::GridImage;

/// Fails with [`Error::WouldOverwrite`] when `path` exists and `force` is off.
pub fn guard_overwrite(path: &Path, force: bool) -> Result<()> {
    if !force && path.exists() {
        return Err(Error::WouldOverwrite(path.to_path_buf()));
    }
    Ok(())
}

/// Writes `bytes` to `path`, creating parent directories.
pub fn write_bytes(path: &Path, bytes: &[u8], force: bool) -> Result<()> {
    guard_overwrite(path, force)?;
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    fs::write(path, bytes)?;
    Ok(())
}

/// Range and spacing stored next to a PGM as `<file>.json`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PgmSidecar {
    pub min: f64,
    pub max: f64,
    pub spacing: f64,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PgmFormat {
    /// `P2`.
    Ascii,
    /// `P5`.
    Binary,
}

/// Quantises `u` linearly from `[min, max]` to `0..=maxval` (255 or 65535)
/// and writes the PGM plus its sidecar. Row `i` of the grid is line `i` of
/// the image.
pub fn write_pgm(path: &Path, u: &GridImage, format: PgmFormat, maxval: u16, force: bool) -> Result<()> {
    if maxval != 255 && maxval != 65535 {
        return Err(invalid("maxval", "must be 255 or 65535"));
    }
    let side = sidecar_path(path);
    guard_overwrite(path, force)?;
    guard_overwrite(&side, force)?;
    let (lo, hi) = (u.min(), u.max());
    let span = if hi > lo { hi - lo } else { 1.0 };
    let m = maxval as f64;
    let q: Vec<u16> = u.values().iter().map(|&v| (((v - lo) / span) * m).round().clamp(0.0, m) as u16).collect();
    let (ht, w) = u.dims();
    let mut out = Vec::new();
    match format {
        PgmFormat::Ascii => {
            writeln!(out, "P2\n{w} {ht}\n{maxval}")?;
            for row in q.chunks(w) {
                let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
                writeln!(out, "{}", line.join(" "))?;
            }
        }
        PgmFormat::Binary => {
            write!(out, "P5\n{w} {ht}\n{maxval}\n")?;
            for v in &q {
                if maxval == 255 {
                    out.push(*v as u8);
                } else {
                    out.extend_from_slice(&v.to_be_bytes());
                }
            }
        }
    }
    write_bytes(path, &out, force)?;
    let meta = PgmSidecar {
        min: lo,
        max: hi,
        spacing: u.spacing(),
    };
    write_bytes(&side, serde_json::to_string_pretty(&meta)?.as_bytes(), force)
}

/// Reads a P2 or P5 file. With a sidecar the values are mapped back to
/// `[min, max]` and its spacing is used; without one, values are scaled to
/// `[0, 1]` and the spacing is `1/width`.
pub fn read_pgm(path: &Path) -> Result<GridImage> {
    let bytes = fs::read(path)?;
    let (magic, rest) = bytes.split_at(2.min(bytes.len()));
    let binary = match magic {
        b"P2" => false,
        b"P5" => true,
        _ => return Err(Error::Parse(format!("{}: not a P2/P5 PGM", path.display()))),
    };
    // Header: width, height, maxval, separated by whitespace and comments.
    let mut pos = 0;
    let mut header = Vec::new();
    while header.len() < 3 {
        while pos < rest.len() && (rest[pos].is_ascii_whitespace() || rest[pos] == b'#') {
            if rest[pos] == b'#' {
                while pos < rest.len() && rest[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                pos += 1;
            }
        }
        let start = pos;
        while pos < rest.len() && rest[pos].is_ascii_digit() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Parse(format!("{}: truncated header", path.display())));
        }
        let v: usize = std::str::from_utf8(&rest[start..pos])
            .expect("ascii digits")
            .parse()
            .map_err(|e| Error::Parse(format!("{e}")))?;
        header.push(v);
    }
    let (w, ht, maxval) = (header[0], header[1], header[2]);
    if maxval == 0 || maxval > 65535 {
        return Err(Error::Parse(format!("bad maxval {maxval}")));
    }
    let n = w * ht;
    let raw: Vec<f64> = if binary {
        // Exactly one whitespace byte separates the header from the data.
        let data = &rest[pos + 1..];
        let bpp = if maxval < 256 { 1 } else { 2 };
        if data.len() < n * bpp {
            return Err(Error::Parse(format!("{}: expected {} data bytes", path.display(), n * bpp)));
        }
        (0..n)
            .map(|k| {
                if bpp == 1 {
                    data[k] as f64
                } else {
                    u16::from_be_bytes([data[2 * k], data[2 * k + 1]]) as f64
                }
            })
            .collect()
    } else {
        let text = std::str::from_utf8(&rest[pos..]).map_err(|e| Error::Parse(e.to_string()))?;
        let vals: std::result::Result<Vec<f64>, _> = text
            .lines()
            .flat_map(|l| l.split('#').next().unwrap_or("").split_ascii_whitespace())
            .take(n)
            .map(|t| t.parse::<u32>().map(f64::from))
            .collect();
        let vals = vals.map_err(|e| Error::Parse(e.to_string()))?;
        if vals.len() != n {
            return Err(Error::Parse(format!("{}: expected {n} samples, found {}", path.display(), vals.len())));
        }
        vals
    };
    let side = sidecar_path(path);
    let (lo, hi, spacing) = if side.exists() {
        let meta: PgmSidecar = serde_json::from_slice(&fs::read(&side)?)?;
        (meta.min, meta.max, meta.spacing)
    } else {
        (0.0, 1.0, 1.0 / w.max(1) as f64)
    };
    let span = if hi > lo { hi - lo } else { 0.0 };
    let m = maxval as f64;
    GridImage::new(w, ht, spacing, raw.into_iter().map(|v| lo + span * v / m).collect())
}

/// Writes a CSV table with a header row.
pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<f64>], force: bool) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(Vec::new());
    let map = |e: csv::Error| Error::Parse(e.to_string());
    wtr.write_record(header).map_err(map)?;
    for r in rows {
        if r.len() != header.len() {
            return Err(invalid("rows", format!("row has {} fields, header {}", r.len(), header.len())));
        }
        wtr.write_record(r.iter().map(|v| format!("{v:e}"))).map_err(map)?;
    }
    let bytes = wtr.into_inner().map_err(|e| Error::Parse(e.to_string()))?;
    write_bytes(path, &bytes, force)
}

/// Reads a numeric CSV table written by [`write_csv`].
pub fn read_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let map = |e: csv::Error| Error::Parse(e.to_string());
    let mut rdr = csv::Reader::from_path(path).map_err(map)?;
    let header = rdr.headers().map_err(map)?.iter().map(str::to_string).collect();
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(map)?;
        let row: std::result::Result<Vec<f64>, _> = rec.iter().map(|s| s.trim().parse::<f64>()).collect();
        rows.push(row.map_err(|e| Error::Parse(e.to_string()))?);
    }
    Ok((header, rows))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> GridImage {
        GridImage::new(3, 2, 0.25, vec![-1.0, 0.0, 1.0, 0.5, 0.25, -0.5]).unwrap()
    }

    #[test]
    fn pgm_round_trips_through_sidecar() {
        let dir = tempfile::tempdir().unwrap();
        for (fmt, maxval) in [(PgmFormat::Ascii, 255), (PgmFormat::Binary, 255), (PgmFormat::Binary, 65535)] {
            let p = dir.path().join(format!("u-{maxval}-{fmt:?}.pgm"));
            write_pgm(&p, &sample(), fmt, maxval, false).unwrap();
            let back = read_pgm(&p).unwrap();
            assert_eq!(back.dims(), (2, 3));
            assert_eq!(back.spacing(), 0.25);
            let step = 2.0 / maxval as f64;
            for (a, b) in back.values().iter().zip(sample().values()) {
                assert!((a - b).abs() <= 0.5 * step + 1e-15);
            }
        }
    }

    #[test]
    fn refuses_to_overwrite_without_force() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("u.pgm");
        write_pgm(&p, &sample(), PgmFormat::Binary, 255, false).unwrap();
        let err = write_pgm(&p, &sample(), PgmFormat::Binary, 255, false).unwrap_err();
        assert!(matches!(err, Error::WouldOverwrite(_)));
        write_pgm(&p, &sample(), PgmFormat::Binary, 255, true).unwrap();
    }

    #[test]
    fn pgm_without_sidecar_and_with_comments() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("plain.pgm");
        fs::write(&p, "P2\n# made by hand\n2 2\n4\n0 4\n# mid-data\n1 2\n").unwrap();
        let u = read_pgm(&p).unwrap();
        assert_eq!(u.values(), &[0.0, 1.0, 0.25, 0.5]);
        assert_eq!(u.spacing(), 0.5);
        fs::write(&p, "P6\n1 1\n255\n").unwrap();
        assert!(read_pgm(&p).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.csv");
        write_csv(&p, &["rho", "t"], &[vec![0.5, 1e-3], vec![0.25, 2.5e-4]], false).unwrap();
        let (h, rows) = read_csv(&p).unwrap();
        assert_eq!(h, vec!["rho", "t"]);
        assert_eq!(rows, vec![vec![0.5, 1e-3], vec![0.25, 2.5e-4]]);
        assert!(write_csv(&p, &["a"], &[vec![1.0, 2.0]], true).is_err());
    }
}
