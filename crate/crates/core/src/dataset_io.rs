//! Dataset dump and load.
//!
//! Binary container (all little-endian):
//!
//! ```text
//! magic  b"PLDS"
//! u32    format version (1)
//! u64    n
//! u64    p
//! f64    X, n*p values, row-major
//! f64    y, n values
//! f64    beta0, p values
//! f64    xi, n values
//! ```
//!
//! A JSON sidecar carries the parameters and provenance. The CSV form writes
//! `X.csv`, `y.csv` and `beta0.csv` next to the same sidecar; floats use the
//! shortest round-trip representation.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Dataset, ModelParams, Provenance};

const MAGIC: &[u8; 4] = b"PLDS";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub format_version: u32,
    pub n: usize,
    pub p: usize,
    pub params: ModelParams,
    pub provenance: Provenance,
}

impl Sidecar {
    fn of(d: &Dataset) -> Self {
        Self {
            format_version: VERSION,
            n: d.n(),
            p: d.p(),
            params: *d.params(),
            provenance: d.provenance(),
        }
    }
}

pub fn write_sidecar(d: &Dataset, path: &Path) -> Result<()> {
    let f = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(f, &Sidecar::of(d))?;
    Ok(())
}

pub fn read_sidecar(path: &Path) -> Result<Sidecar> {
    let s: Sidecar = serde_json::from_reader(BufReader::new(File::open(path)?))?;
    if s.format_version != VERSION {
        return Err(Error::Format(format!(
            "unsupported sidecar version {}",
            s.format_version
        )));
    }
    Ok(s)
}

fn put(w: &mut impl Write, xs: impl IntoIterator<Item = f64>) -> Result<()> {
    for x in xs {
        w.write_all(&x.to_le_bytes())?;
    }
    Ok(())
}

fn take(r: &mut impl Read, len: usize) -> Result<Vec<f64>> {
    let mut buf = vec![0u8; len * 8];
    r.read_exact(&mut buf)
        .map_err(|e| Error::Format(format!("truncated payload: {e}")))?;
    Ok(buf
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect())
}

/// Writes the binary container and its sidecar.
pub fn write_binary(d: &Dataset, bin: &Path, sidecar: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(bin)?);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(d.n() as u64).to_le_bytes())?;
    w.write_all(&(d.p() as u64).to_le_bytes())?;
    put(&mut w, d.x().iter().copied())?;
    put(&mut w, d.y().iter().copied())?;
    put(&mut w, d.beta0().iter().copied())?;
    put(&mut w, d.xi().iter().copied())?;
    w.flush()?;
    write_sidecar(d, sidecar)
}

pub fn read_binary(bin: &Path, sidecar: &Path) -> Result<Dataset> {
    let meta = read_sidecar(sidecar)?;
    let mut r = BufReader::new(File::open(bin)?);
    let mut head = [0u8; 24];
    r.read_exact(&mut head)
        .map_err(|e| Error::Format(format!("truncated header: {e}")))?;
    if &head[..4] != MAGIC {
        return Err(Error::Format("bad magic".into()));
    }
    let version = u32::from_le_bytes(head[4..8].try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let n = u64::from_le_bytes(head[8..16].try_into().expect("8 bytes")) as usize;
    let p = u64::from_le_bytes(head[16..24].try_into().expect("8 bytes")) as usize;
    if (n, p) != (meta.n, meta.p) {
        return Err(Error::Format(format!(
            "container is {n}x{p}, sidecar says {}x{}",
            meta.n, meta.p
        )));
    }
    let x = Array2::from_shape_vec((n, p), take(&mut r, n * p)?).map_err(|e| Error::Format(e.to_string()))?;
    let y = Array1::from(take(&mut r, n)?);
    let beta0 = Array1::from(take(&mut r, p)?);
    let xi = Array1::from(take(&mut r, n)?);
    let mut rest = Vec::new();
    r.read_to_end(&mut rest)?;
    if !rest.is_empty() {
        return Err(Error::Format(format!("{} trailing bytes", rest.len())));
    }
    Dataset::from_parts(x, y, beta0, xi, meta.params, meta.provenance)
}

fn write_rows<'a>(path: &Path, rows: impl Iterator<Item = &'a [f64]>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for row in rows {
        let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        writeln!(w, "{}", line.join(","))?;
    }
    w.flush()?;
    Ok(())
}

fn read_rows(path: &Path) -> Result<Vec<Vec<f64>>> {
    let r = BufReader::new(File::open(path)?);
    let mut rows = Vec::new();
    for (k, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let row = line
            .split(',')
            .map(|s| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::Format(format!("{}:{}: {e}", path.display(), k + 1)))
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    Ok(rows)
}

/// Writes `X.csv`, `y.csv`, `beta0.csv` and `dataset.json` into `dir`.
pub fn write_csv_triple(d: &Dataset, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    write_rows(
        &dir.join("X.csv"),
        d.x().rows().into_iter().map(|r| r.to_slice().expect("standard layout")),
    )?;
    write_rows(&dir.join("y.csv"), d.y().iter().map(std::slice::from_ref))?;
    write_rows(&dir.join("beta0.csv"), d.beta0().iter().map(std::slice::from_ref))?;
    write_sidecar(d, &dir.join("dataset.json"))
}

/// Reads a CSV triple. The observation noise is recovered as `y − X beta0`.
pub fn read_csv_triple(dir: &Path) -> Result<Dataset> {
    let meta = read_sidecar(&dir.join("dataset.json"))?;
    let xr = read_rows(&dir.join("X.csv"))?;
    let column = |name: &str| -> Result<Array1<f64>> {
        let rows = read_rows(&dir.join(name))?;
        if rows.iter().any(|r| r.len() != 1) {
            return Err(Error::Format(format!("{name} must have one value per line")));
        }
        Ok(rows.into_iter().map(|r| r[0]).collect())
    };
    let y = column("y.csv")?;
    let beta0 = column("beta0.csv")?;
    if xr.len() != meta.n || xr.iter().any(|r| r.len() != meta.p) {
        return Err(Error::Format(format!("X.csv is not {}x{}", meta.n, meta.p)));
    }
    let x = Array2::from_shape_vec((meta.n, meta.p), xr.into_iter().flatten().collect())
        .map_err(|e| Error::Format(e.to_string()))?;
    if y.len() != meta.n || beta0.len() != meta.p {
        return Err(Error::DimensionMismatch(
            "y or beta0 length disagrees with sidecar".into(),
        ));
    }
    let xi = &y - &x.dot(&beta0);
    Dataset::from_parts(x, y, beta0, xi, meta.params, meta.provenance)
}
