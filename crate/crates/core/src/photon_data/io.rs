//! Plain-text file formats: lidar cubes, impulse responses, point clouds
//! (CSV and ASCII PLY) and background/metric grids.
//!
//! All formats are line oriented; indices in files are 1-based. Floats are
//! written with Rust's shortest round-trip formatting, so write/read is an
//! identity.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use thiserror::Error;

use crate::grid::Grid;
use crate::photon_data::{ImpulseResponse, SparseLidarCube};
use crate::Real;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("invalid data: {0}")]
    Invalid(String),
}

fn parse_err(line: usize, msg: impl Into<String>) -> IoError {
    IoError::Parse { line, msg: msg.into() }
}

fn field<T: std::str::FromStr>(tok: Option<&str>, line: usize, name: &str) -> Result<T, IoError> {
    tok.ok_or_else(|| parse_err(line, format!("missing field `{name}`")))?
        .parse::<T>()
        .map_err(|_| parse_err(line, format!("malformed field `{name}`")))
}

fn real_field<S: Real>(tok: Option<&str>, line: usize, name: &str) -> Result<S, IoError> {
    let raw = tok.ok_or_else(|| parse_err(line, format!("missing field `{name}`")))?;
    S::parse(raw).ok_or_else(|| parse_err(line, format!("malformed field `{name}`")))
}

pub fn write_cube<S: Real>(cube: &SparseLidarCube<S>, path: &Path) -> Result<(), IoError> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(
        w,
        "lidar-cube v1 {} {} {} {} {}",
        cube.n_rows(),
        cube.n_cols(),
        cube.n_bins(),
        cube.bin_width(),
        cube.pixel_pitch()
    )?;
    for (pix, hist) in cube.pixels_iter() {
        for &(bin, count) in hist {
            writeln!(w, "{} {} {} {}", pix.r + 1, pix.c + 1, bin, count)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_cube<S: Real>(path: &Path) -> Result<SparseLidarCube<S>, IoError> {
    let reader = BufReader::new(File::open(path)?);
    let mut lines = reader.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| parse_err(1, "empty cube file"))?;
    let header = header?;
    let mut toks = header.split_whitespace();
    if toks.next() != Some("lidar-cube") || toks.next() != Some("v1") {
        return Err(parse_err(1, "expected header `lidar-cube v1 ...`"));
    }
    let n_rows: usize = field(toks.next(), 1, "N_r")?;
    let n_cols: usize = field(toks.next(), 1, "N_c")?;
    let n_bins: usize = field(toks.next(), 1, "T")?;
    let bin_width: S = real_field(toks.next(), 1, "delta_b")?;
    let pixel_pitch: S = real_field(toks.next(), 1, "delta_p")?;
    if n_rows == 0 || n_cols == 0 || n_bins == 0 {
        return Err(parse_err(1, "cube dimensions must be positive"));
    }

    let mut pixels: Vec<Vec<(u32, u32)>> = vec![Vec::new(); n_rows * n_cols];
    for (idx, line) in lines {
        let line_no = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut toks = line.split_whitespace();
        let i: usize = field(toks.next(), line_no, "i")?;
        let j: usize = field(toks.next(), line_no, "j")?;
        let t: u32 = field(toks.next(), line_no, "t")?;
        let count: u32 = field(toks.next(), line_no, "count")?;
        if i < 1 || i > n_rows || j < 1 || j > n_cols {
            return Err(parse_err(line_no, format!("pixel ({i},{j}) out of range")));
        }
        if t < 1 || t as usize > n_bins {
            return Err(parse_err(line_no, format!("bin {t} out of range")));
        }
        if count == 0 {
            return Err(parse_err(line_no, "zero-count entries must not be stored"));
        }
        pixels[(i - 1) * n_cols + (j - 1)].push((t, count));
    }
    for hist in &mut pixels {
        hist.sort_unstable_by_key(|&(bin, _)| bin);
    }
    SparseLidarCube::new(
        n_rows,
        n_cols,
        n_bins,
        pixels,
        Grid::fill(n_rows, n_cols, S::one()),
        bin_width,
        pixel_pitch,
    )
    .map_err(|e| IoError::Invalid(e.to_string()))
}

pub fn write_irf<S: Real>(irf: &ImpulseResponse<S>, path: &Path) -> Result<(), IoError> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "irf v1 {} {} {}", irf.len(), irf.attack(), irf.decay())?;
    for v in irf.samples() {
        writeln!(w, "{v}")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_irf<S: Real>(path: &Path) -> Result<ImpulseResponse<S>, IoError> {
    let reader = BufReader::new(File::open(path)?);
    let mut lines = reader.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| parse_err(1, "empty irf file"))?;
    let header = header?;
    let mut toks = header.split_whitespace();
    if toks.next() != Some("irf") || toks.next() != Some("v1") {
        return Err(parse_err(1, "expected header `irf v1 ...`"));
    }
    let length: usize = field(toks.next(), 1, "length")?;
    let attack: usize = field(toks.next(), 1, "attack")?;
    let decay: usize = field(toks.next(), 1, "decay")?;
    let mut samples = Vec::with_capacity(length);
    for (idx, line) in lines {
        let line_no = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        samples.push(
            S::parse(line.trim()).ok_or_else(|| parse_err(line_no, "malformed sample"))?,
        );
    }
    if samples.len() != length {
        return Err(IoError::Invalid(format!(
            "header declares {length} samples, file has {}",
            samples.len()
        )));
    }
    let irf = ImpulseResponse::new(samples).map_err(|e| IoError::Invalid(e.to_string()))?;
    if irf.attack() != attack || irf.decay() != decay {
        return Err(IoError::Invalid(format!(
            "header attack/decay {attack}/{decay} disagree with samples ({}/{})",
            irf.attack(),
            irf.decay()
        )));
    }
    Ok(irf)
}

/// One exported point-cloud record. `i`/`j` are 1-based row/column.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointRow<S> {
    pub i: u32,
    pub j: u32,
    pub t: S,
    pub intensity: S,
    pub surface_id: u32,
}

pub fn write_point_cloud_csv<S: Real>(rows: &[PointRow<S>], path: &Path) -> Result<(), IoError> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "i,j,t,intensity,surface_id")?;
    for p in rows {
        writeln!(w, "{},{},{},{},{}", p.i, p.j, p.t, p.intensity, p.surface_id)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_point_cloud_csv<S: Real>(path: &Path) -> Result<Vec<PointRow<S>>, IoError> {
    let reader = BufReader::new(File::open(path)?);
    let mut rows = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        if line_no == 1 {
            if line.trim() != "i,j,t,intensity,surface_id" {
                return Err(parse_err(1, "expected header `i,j,t,intensity,surface_id`"));
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let mut toks = line.split(',');
        rows.push(PointRow {
            i: field(toks.next(), line_no, "i")?,
            j: field(toks.next(), line_no, "j")?,
            t: real_field(toks.next(), line_no, "t")?,
            intensity: real_field(toks.next(), line_no, "intensity")?,
            surface_id: field(toks.next(), line_no, "surface_id")?,
        });
    }
    Ok(rows)
}

/// ASCII PLY export with x = j * pixel_pitch, y = i * pixel_pitch,
/// z = t * bin_width.
pub fn write_point_cloud_ply<S: Real>(
    rows: &[PointRow<S>],
    bin_width: S,
    pixel_pitch: S,
    path: &Path,
) -> Result<(), IoError> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "ply")?;
    writeln!(w, "format ascii 1.0")?;
    writeln!(w, "element vertex {}", rows.len())?;
    writeln!(w, "property float x")?;
    writeln!(w, "property float y")?;
    writeln!(w, "property float z")?;
    writeln!(w, "property float intensity")?;
    writeln!(w, "property int surface_id")?;
    writeln!(w, "end_header")?;
    for p in rows {
        let x = pixel_pitch * S::of_usize(p.j as usize);
        let y = pixel_pitch * S::of_usize(p.i as usize);
        let z = bin_width * p.t;
        writeln!(w, "{} {} {} {} {}", x, y, z, p.intensity, p.surface_id)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_grid_csv<S: Real>(grid: &Grid<S>, path: &Path) -> Result<(), IoError> {
    let mut w = BufWriter::new(File::create(path)?);
    for r in 0..grid.n_rows() {
        let row: Vec<String> = (0..grid.n_cols()).map(|c| format!("{}", grid[(r, c)])).collect();
        writeln!(w, "{}", row.join(","))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_grid_csv<S: Real>(path: &Path) -> Result<Grid<S>, IoError> {
    let reader = BufReader::new(File::open(path)?);
    let mut rows: Vec<Vec<S>> = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let row: Result<Vec<S>, IoError> = line
            .split(',')
            .map(|tok| {
                S::parse(tok.trim()).ok_or_else(|| parse_err(line_no, "malformed value"))
            })
            .collect();
        let row = row?;
        if let Some(first) = rows.first() {
            if row.len() != first.len() {
                return Err(parse_err(line_no, "ragged grid row"));
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(IoError::Invalid("empty grid file".into()));
    }
    let (n_rows, n_cols) = (rows.len(), rows[0].len());
    Ok(Grid::from_vec(n_rows, n_cols, rows.into_iter().flatten().collect()))
}
