//! On-disk formats: a little-endian binary grid with a 64-byte header, JSON
//! sidecars, CSV tables (LF line endings) and JSON-lines trajectories.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::aubry::AubrySet;
use crate::error::{Error, Result};
use crate::geometry::{TorusGeometry, Vec2};
use crate::semiflow::Trajectory;
use crate::superdiff::SuperdiffGrid;
use crate::twist::{Configuration, GeneratingFunction};
use crate::weakkam::ScalarField;

pub const MAGIC: [u8; 8] = *b"WKGRID01";
pub const HEADER_LEN: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GridKind {
    Field,
    GeneratingTable,
}

impl GridKind {
    fn code(self) -> u32 {
        match self {
            GridKind::Field => 1,
            GridKind::GeneratingTable => 2,
        }
    }

    fn from_code(c: u32) -> Result<Self> {
        match c {
            1 => Ok(GridKind::Field),
            2 => Ok(GridKind::GeneratingTable),
            _ => Err(Error::Format(format!("unknown grid kind {c}"))),
        }
    }
}

/// Header layout (all little-endian):
/// magic[8] kind:u32 dim:u32 rows:u64 cols:u64 param:f64 system_hash:u64
/// extra:u64 reserved[8].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridHeader {
    pub kind: GridKind,
    pub dim: u32,
    pub rows: u64,
    pub cols: u64,
    /// Kind-specific scalar (d_max for generating tables).
    pub param: f64,
    pub system_hash: u64,
    pub extra: u64,
}

pub fn write_grid<W: Write>(mut w: W, header: &GridHeader, data: &[f64]) -> Result<()> {
    if (header.rows * header.cols) as usize != data.len() {
        return Err(Error::Format(format!(
            "{}×{} header for {} values",
            header.rows,
            header.cols,
            data.len()
        )));
    }
    let mut buf = Vec::with_capacity(HEADER_LEN + 8 * data.len());
    buf.extend_from_slice(&MAGIC);
    buf.extend_from_slice(&header.kind.code().to_le_bytes());
    buf.extend_from_slice(&header.dim.to_le_bytes());
    buf.extend_from_slice(&header.rows.to_le_bytes());
    buf.extend_from_slice(&header.cols.to_le_bytes());
    buf.extend_from_slice(&header.param.to_le_bytes());
    buf.extend_from_slice(&header.system_hash.to_le_bytes());
    buf.extend_from_slice(&header.extra.to_le_bytes());
    buf.resize(HEADER_LEN, 0);
    for v in data {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn read_grid<R: Read>(mut r: R) -> Result<(GridHeader, Vec<f64>)> {
    let mut head = [0u8; HEADER_LEN];
    r.read_exact(&mut head)?;
    if head[..8] != MAGIC {
        return Err(Error::Format("bad magic".into()));
    }
    let u32_at = |o: usize| u32::from_le_bytes(head[o..o + 4].try_into().expect("4 bytes"));
    let u64_at = |o: usize| u64::from_le_bytes(head[o..o + 8].try_into().expect("8 bytes"));
    let header = GridHeader {
        kind: GridKind::from_code(u32_at(8))?,
        dim: u32_at(12),
        rows: u64_at(16),
        cols: u64_at(24),
        param: f64::from_bits(u64_at(32)),
        system_hash: u64_at(40),
        extra: u64_at(48),
    };
    let count = header
        .rows
        .checked_mul(header.cols)
        .filter(|&c| c < (1 << 32))
        .ok_or_else(|| Error::Format("grid too large".into()))? as usize;
    let mut body = Vec::new();
    r.read_to_end(&mut body)?;
    if body.len() != 8 * count {
        return Err(Error::Format(format!("expected {} payload bytes, found {}", 8 * count, body.len())));
    }
    let data = body.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
    Ok((header, data))
}

pub fn write_field<W: Write>(w: W, field: &ScalarField, system_hash: u64) -> Result<()> {
    let g = field.geometry;
    let header = GridHeader {
        kind: GridKind::Field,
        dim: g.dim as u32,
        rows: if g.dim == 1 { 1 } else { g.n as u64 },
        cols: g.n as u64,
        param: 0.0,
        system_hash,
        extra: 0,
    };
    write_grid(w, &header, &field.values)
}

/// Reads a field; returns it with the system hash stored in the header.
pub fn read_field<R: Read>(r: R) -> Result<(ScalarField, u64)> {
    let (h, data) = read_grid(r)?;
    if h.kind != GridKind::Field {
        return Err(Error::Format("not a field grid".into()));
    }
    let g = TorusGeometry::new(h.dim as usize, h.cols as usize)?;
    if g.len() != data.len() {
        return Err(Error::Format("field shape does not match its dimension".into()));
    }
    Ok((ScalarField::new(g, data, "u_c")?, h.system_hash))
}

pub fn write_generating_table<W: Write>(w: W, h: &GeneratingFunction, system_hash: u64) -> Result<()> {
    let (n, d_max, values) = h
        .table()
        .ok_or_else(|| Error::InvalidParameter("only tabulated generating functions are stored".into()))?;
    let header = GridHeader {
        kind: GridKind::GeneratingTable,
        dim: 2,
        rows: n as u64,
        cols: (values.len() / n) as u64,
        param: d_max,
        system_hash,
        extra: 0,
    };
    write_grid(w, &header, values)
}

pub fn read_generating_table<R: Read>(r: R) -> Result<GeneratingFunction> {
    let (h, data) = read_grid(r)?;
    if h.kind != GridKind::GeneratingTable {
        return Err(Error::Format("not a generating-function table".into()));
    }
    GeneratingFunction::from_table(h.rows as usize, h.param, data)
}

/// Metadata written next to a solution grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolutionSidecar {
    pub system: String,
    pub c: [f64; 2],
    pub alpha: f64,
    pub grid: usize,
    pub dim: usize,
    pub tau: f64,
    pub steps: usize,
    pub fixed_point_residual: f64,
    pub tol_fix: f64,
    pub config_hash: String,
}

pub fn write_json<W: Write, T: Serialize>(mut w: W, value: &T) -> Result<()> {
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    Ok(())
}

pub fn read_json<R: Read, T: for<'de> Deserialize<'de>>(r: R) -> Result<T> {
    Ok(serde_json::from_reader(r)?)
}

fn csv_writer<W: Write>(w: W) -> csv::Writer<W> {
    csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(w)
}

fn coord_header(dim: usize) -> Vec<&'static str> {
    if dim == 1 {
        vec!["x"]
    } else {
        vec!["x", "y"]
    }
}

fn coords(dim: usize, p: Vec2) -> Vec<String> {
    (0..dim).map(|k| format!("{}", p[k])).collect()
}

/// One row per grid node: position, diameter of D⁺u, singular and critical
/// flags, and the singular component id (−1 outside Sing).
pub fn write_cells_csv<W: Write>(w: W, sd: &SuperdiffGrid) -> Result<()> {
    let g = sd.geometry;
    let mut component = vec![-1i64; g.len()];
    for (id, comp) in sd.singular_components().iter().enumerate() {
        for &cell in &comp.cells {
            component[cell] = id as i64;
        }
    }
    let mut wr = csv_writer(w);
    let mut head = coord_header(g.dim);
    head.extend(["diameter", "is_singular", "is_critical", "component"]);
    wr.write_record(&head)?;
    for i in 0..g.len() {
        let mut row = coords(g.dim, g.node_point(i));
        row.push(format!("{}", sd.sets[i].diameter()));
        row.push((sd.singular[i] as u8).to_string());
        row.push((sd.critical[i] as u8).to_string());
        row.push(component[i].to_string());
        wr.write_record(&row)?;
    }
    wr.flush()?;
    Ok(())
}

/// Plain point list (cell centres, Aubry points, critical points).
pub fn write_points_csv<W: Write>(w: W, dim: usize, points: &[Vec2]) -> Result<()> {
    let mut wr = csv_writer(w);
    wr.write_record(coord_header(dim))?;
    for p in points {
        wr.write_record(coords(dim, *p))?;
    }
    wr.flush()?;
    Ok(())
}

/// Barrier diagonal: position and h(x,x).
pub fn write_diagonal_csv<W: Write>(w: W, dim: usize, aubry: &AubrySet) -> Result<()> {
    let mut wr = csv_writer(w);
    let mut head = coord_header(dim);
    head.push("h");
    wr.write_record(&head)?;
    for (p, h) in &aubry.diagonal {
        let mut row = coords(dim, Vec2::new(p[0], p[1]));
        row.push(format!("{h}"));
        wr.write_record(&row)?;
    }
    wr.flush()?;
    Ok(())
}

/// Configuration over one period: (i, x_i).
pub fn write_config_csv<W: Write>(w: W, conf: &Configuration) -> Result<()> {
    let mut wr = csv_writer(w);
    wr.write_record(["i", "x"])?;
    for i in conf.indices() {
        wr.write_record([i.to_string(), format!("{}", conf.get(i))])?;
    }
    wr.flush()?;
    Ok(())
}

/// Critical values with multiplicities.
pub fn write_histogram_csv<W: Write>(w: W, hist: &[(f64, usize)]) -> Result<()> {
    let mut wr = csv_writer(w);
    wr.write_record(["level", "count"])?;
    for (l, n) in hist {
        wr.write_record([format!("{l}"), n.to_string()])?;
    }
    wr.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub t: f64,
    pub x: Vec<f64>,
    pub p: Vec<f64>,
    pub v: f64,
}

/// One JSON object per step: {t, x, p, v} with x on the lift.
pub fn write_trajectory_jsonl<W: Write>(mut w: W, tr: &Trajectory) -> Result<()> {
    for k in 0..tr.points.len() {
        let rec = TrajectoryRecord {
            t: k as f64 * tr.step,
            x: (0..tr.dim).map(|i| tr.points[k][i]).collect(),
            p: (0..tr.dim).map(|i| tr.selected_p[k][i]).collect(),
            v: tr.v_values[k],
        };
        serde_json::to_writer(&mut w, &rec)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_trajectory_jsonl<R: Read>(r: R) -> Result<Vec<TrajectoryRecord>> {
    let mut s = String::new();
    let mut r = r;
    r.read_to_string(&mut s)?;
    s.lines().filter(|l| !l.trim().is_empty()).map(|l| Ok(serde_json::from_str(l)?)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn field_round_trip_is_bit_exact() {
        let g = TorusGeometry::new(2, 16).unwrap();
        let f = ScalarField::from_fn(g, "f", |x| (x[0] * 7.0).sin() * x[1]).unwrap();
        let mut buf = Vec::new();
        write_field(&mut buf, &f, 42).unwrap();
        assert_eq!(buf.len(), HEADER_LEN + 8 * g.len());
        let (back, hash) = read_field(buf.as_slice()).unwrap();
        assert_eq!(hash, 42);
        assert_eq!(back.geometry, g);
        assert!(back.values.iter().zip(&f.values).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn truncated_payload_is_rejected() {
        let g = TorusGeometry::new(1, 16).unwrap();
        let f = ScalarField::constant(g, 1.0, "one");
        let mut buf = Vec::new();
        write_field(&mut buf, &f, 0).unwrap();
        buf.truncate(buf.len() - 3);
        assert!(read_field(buf.as_slice()).is_err());
        buf[0] = b'X';
        assert!(read_field(buf.as_slice()).is_err());
    }

    #[test]
    fn points_csv_uses_lf() {
        let mut buf = Vec::new();
        write_points_csv(&mut buf, 1, &[Vec2::new(0.5, 0.0)]).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "x\n0.5\n");
    }
}
