//! Flat CSV and compact binary dumps of grid data.
//!
//! Binary layout, all little-endian:
//!
//! ```text
//! 0..4    magic (b"HJF1" for fields, b"HJT1" for tables)
//! 4..6    u16 slow axis count
//! 6..8    u16 fast axis count
//! 8..16   u64 payload length
//! then    (lo: f64, hi: f64, n: u64) per axis, t: f64, payload: f64 * len
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::grid::{Axis, Grid, ScalarField};

pub const FIELD_MAGIC: [u8; 4] = *b"HJF1";
pub const TABLE_MAGIC: [u8; 4] = *b"HJT1";

/// Decoded binary dump.
#[derive(Clone, Debug, PartialEq)]
pub struct RawDump {
    pub magic: [u8; 4],
    pub slow: Vec<Axis>,
    pub fast: Vec<Axis>,
    pub t: f64,
    pub payload: Vec<f64>,
}

pub fn encode(dump: &RawDump) -> Vec<u8> {
    let axes = dump.slow.len() + dump.fast.len();
    let mut out = Vec::with_capacity(16 + 24 * axes + 8 + 8 * dump.payload.len());
    out.extend_from_slice(&dump.magic);
    out.extend_from_slice(&(dump.slow.len() as u16).to_le_bytes());
    out.extend_from_slice(&(dump.fast.len() as u16).to_le_bytes());
    out.extend_from_slice(&(dump.payload.len() as u64).to_le_bytes());
    for a in dump.slow.iter().chain(dump.fast.iter()) {
        out.extend_from_slice(&a.lo.to_le_bytes());
        out.extend_from_slice(&a.hi.to_le_bytes());
        out.extend_from_slice(&(a.n as u64).to_le_bytes());
    }
    out.extend_from_slice(&dump.t.to_le_bytes());
    for v in &dump.payload {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn take<'a>(bytes: &'a [u8], at: &mut usize, n: usize) -> Result<&'a [u8]> {
    let end = *at + n;
    if end > bytes.len() {
        return Err(Error::InvalidArgument("truncated binary dump".into()));
    }
    let s = &bytes[*at..end];
    *at = end;
    Ok(s)
}

fn f64_at(bytes: &[u8], at: &mut usize) -> Result<f64> {
    Ok(f64::from_le_bytes(take(bytes, at, 8)?.try_into().unwrap()))
}

fn u64_at(bytes: &[u8], at: &mut usize) -> Result<u64> {
    Ok(u64::from_le_bytes(take(bytes, at, 8)?.try_into().unwrap()))
}

pub fn decode(bytes: &[u8]) -> Result<RawDump> {
    let mut at = 0;
    let magic: [u8; 4] = take(bytes, &mut at, 4)?.try_into().unwrap();
    let n_slow = u16::from_le_bytes(take(bytes, &mut at, 2)?.try_into().unwrap()) as usize;
    let n_fast = u16::from_le_bytes(take(bytes, &mut at, 2)?.try_into().unwrap()) as usize;
    let len = u64_at(bytes, &mut at)? as usize;
    let mut axes = Vec::with_capacity(n_slow + n_fast);
    for _ in 0..n_slow + n_fast {
        let lo = f64_at(bytes, &mut at)?;
        let hi = f64_at(bytes, &mut at)?;
        let n = u64_at(bytes, &mut at)? as usize;
        axes.push(Axis::new(lo, hi, n)?);
    }
    let t = f64_at(bytes, &mut at)?;
    let expected: usize = axes.iter().map(|a| a.n).product();
    if expected != len {
        return Err(Error::ShapeMismatch(format!("header declares {len} values for {expected} nodes")));
    }
    let mut payload = Vec::with_capacity(len);
    for _ in 0..len {
        payload.push(f64_at(bytes, &mut at)?);
    }
    if at != bytes.len() {
        return Err(Error::InvalidArgument("trailing bytes after payload".into()));
    }
    let fast = axes.split_off(n_slow);
    Ok(RawDump {
        magic,
        slow: axes,
        fast,
        t,
        payload,
    })
}

pub fn write_dump(path: &Path, dump: &RawDump) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&encode(dump))?;
    w.flush()?;
    Ok(())
}

pub fn read_dump(path: &Path) -> Result<RawDump> {
    let mut bytes = Vec::new();
    BufReader::new(File::open(path)?).read_to_end(&mut bytes)?;
    decode(&bytes)
}

pub fn write_field_bin(path: &Path, f: &ScalarField) -> Result<()> {
    write_dump(
        path,
        &RawDump {
            magic: FIELD_MAGIC,
            slow: f.grid.slow_axes().to_vec(),
            fast: f.grid.fast_axes().to_vec(),
            t: f.t,
            payload: f.values.clone(),
        },
    )
}

/// Reads a field dump; the returned grid carries `t_final = max(t, 1)`.
pub fn read_field_bin(path: &Path) -> Result<ScalarField> {
    let d = read_dump(path)?;
    if d.magic != FIELD_MAGIC {
        return Err(Error::InvalidArgument(format!("{} is not a field dump", path.display())));
    }
    let grid = Arc::new(Grid::new(d.slow, d.fast, d.t.max(1.0), 0.5)?);
    ScalarField::new(grid, d.t, d.payload)
}

/// One row per node: coordinates then value.
pub fn field_csv(f: &ScalarField) -> String {
    let g = &f.grid;
    let mut s = String::new();
    for k in 0..g.n_slow() {
        s.push_str(&format!("x{k},"));
    }
    for k in 0..g.n_fast() {
        s.push_str(&format!("y{k},"));
    }
    s.push_str("value\n");
    for (i, v) in f.values.iter().enumerate() {
        let c = g.coords(i);
        for ck in c.iter().take(g.dims()) {
            s.push_str(&format!("{ck:.12e},"));
        }
        s.push_str(&format!("{v:.12e}\n"));
    }
    s
}

pub fn write_field_csv(path: &Path, f: &ScalarField) -> Result<()> {
    std::fs::write(path, field_csv(f))?;
    Ok(())
}

/// CSV with a header row and numeric rows.
pub fn table_csv(header: &[&str], rows: &[Vec<f64>]) -> String {
    let mut s = header.join(",");
    s.push('\n');
    for r in rows {
        let cells: Vec<String> = r.iter().map(|v| format!("{v:.12e}")).collect();
        s.push_str(&cells.join(","));
        s.push('\n');
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn field() -> ScalarField {
        let g = Arc::new(Grid::new(vec![Axis::new(-1.0, 1.0, 5).unwrap()], vec![Axis::new(0.0, 2.0, 3).unwrap()], 1.0, 0.5).unwrap());
        ScalarField::from_fn(g, 0.5, |x, y| x[0] * 10.0 + y[0])
    }

    #[test]
    fn header_is_sixteen_bytes() {
        let f = field();
        let bytes = encode(&RawDump {
            magic: FIELD_MAGIC,
            slow: f.grid.slow_axes().to_vec(),
            fast: f.grid.fast_axes().to_vec(),
            t: f.t,
            payload: f.values.clone(),
        });
        assert_eq!(&bytes[..4], b"HJF1");
        assert_eq!(u16::from_le_bytes([bytes[4], bytes[5]]), 1);
        assert_eq!(u16::from_le_bytes([bytes[6], bytes[7]]), 1);
        assert_eq!(u64::from_le_bytes(bytes[8..16].try_into().unwrap()), 15);
        assert_eq!(bytes.len(), 16 + 2 * 24 + 8 + 15 * 8);
    }

    #[test]
    fn binary_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("u.bin");
        let f = field();
        write_field_bin(&p, &f).unwrap();
        let g = read_field_bin(&p).unwrap();
        assert_eq!(g.values, f.values);
        assert_eq!(g.t, 0.5);
        assert!(g.grid.same_space(&f.grid));
    }

    #[test]
    fn truncated_dump_is_rejected() {
        let f = field();
        let bytes = encode(&RawDump {
            magic: FIELD_MAGIC,
            slow: f.grid.slow_axes().to_vec(),
            fast: vec![],
            t: 0.0,
            payload: vec![0.0; 5],
        });
        assert!(decode(&bytes[..bytes.len() - 3]).is_err());
        assert!(decode(&bytes).is_ok());
    }

    #[test]
    fn csv_has_one_row_per_node() {
        let f = field();
        let s = field_csv(&f);
        assert_eq!(s.lines().count(), 1 + 15);
        assert!(s.starts_with("x0,y0,value\n"));
    }
}
