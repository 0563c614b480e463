//! Debug exports of sampled paths.
//!
//! CSV: header `t,re,im`, one row per grid step.
//! Binary: little-endian f64, row-major, three values (t, re, im) per step
//! for a [`NoisePath`]; for a [`FieldPath`] each row is
//! (t, re_0, im_0, …, re_{L−1}, im_{L−1}).

use std::io::{self, Write};

use super::{FieldPath, NoisePath};

pub fn write_path_csv<W: Write>(path: &NoisePath, mut out: W) -> io::Result<()> {
    writeln!(out, "t,re,im")?;
    for (k, z) in path.values.iter().enumerate() {
        writeln!(out, "{},{},{}", path.grid.time(k), z.re, z.im)?;
    }
    Ok(())
}

pub fn write_path_binary<W: Write>(path: &NoisePath, mut out: W) -> io::Result<()> {
    for (k, z) in path.values.iter().enumerate() {
        for v in [path.grid.time(k), z.re, z.im] {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

/// Long-format CSV with header `t,site,re,im`.
pub fn write_field_csv<W: Write>(field: &FieldPath, mut out: W) -> io::Result<()> {
    writeln!(out, "t,site,re,im")?;
    for (k, row) in field.values.iter().enumerate() {
        for (m, z) in row.iter().enumerate() {
            writeln!(out, "{},{},{},{}", field.grid.time(k), m, z.re, z.im)?;
        }
    }
    Ok(())
}

pub fn write_field_binary<W: Write>(field: &FieldPath, mut out: W) -> io::Result<()> {
    for (k, row) in field.values.iter().enumerate() {
        out.write_all(&field.grid.time(k).to_le_bytes())?;
        for z in row {
            out.write_all(&z.re.to_le_bytes())?;
            out.write_all(&z.im.to_le_bytes())?;
        }
    }
    Ok(())
}

/// Reads a [`NoisePath`] binary dump back as (t, re, im) triples.
pub fn read_path_binary(bytes: &[u8]) -> io::Result<Vec<[f64; 3]>> {
    if !bytes.len().is_multiple_of(24) {
        return Err(io::Error::new(io::ErrorKind::InvalidData, "length is not a multiple of 24 bytes"));
    }
    Ok(bytes
        .chunks_exact(24)
        .map(|c| {
            let f = |i: usize| f64::from_le_bytes(c[8 * i..8 * i + 8].try_into().unwrap());
            [f(0), f(1), f(2)]
        })
        .collect())
}
