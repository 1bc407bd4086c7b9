//! Wave-function CSV files, JSON summaries and the reference cache.
//!
//! CSV columns are `x, re_u0, im_u0, re_u1, im_u1, stderr0, stderr1`.
//! Lines starting with `#` carry provenance and are skipped on read.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use fgash_core::reconstruction::{GridSpec, WaveFunctionGrid};
use fgash_core::Complex64;
use serde::Serialize;
use sha2::{Digest, Sha256};

pub const CSV_HEADER: [&str; 7] = ["x", "re_u0", "im_u0", "re_u1", "im_u1", "stderr0", "stderr1"];

/// A wave function as stored on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct WaveFunctionTable {
    pub grid: WaveFunctionGrid<1>,
    pub standard_error: [Vec<f64>; 2],
}

impl WaveFunctionTable {
    pub fn without_errors(grid: WaveFunctionGrid<1>) -> Self {
        let n = grid.spec.len();
        Self {
            grid,
            standard_error: [vec![0.0; n], vec![0.0; n]],
        }
    }
}

pub fn write_csv(path: &Path, table: &WaveFunctionTable, provenance: &[String]) -> anyhow::Result<()> {
    let file = fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
    write_csv_to(std::io::BufWriter::new(file), table, provenance)
}

/// Writes `#` provenance lines, the header and one row per grid node.
pub fn write_csv_to<W: Write>(mut out: W, table: &WaveFunctionTable, provenance: &[String]) -> anyhow::Result<()> {
    for line in provenance {
        writeln!(out, "# {line}")?;
    }
    let mut writer = csv::Writer::from_writer(out);
    writer.write_record(CSV_HEADER)?;
    let spec = table.grid.spec;
    let [u0, u1] = &table.grid.components;
    let [s0, s1] = &table.standard_error;
    for j in 0..spec.len() {
        writer.write_record([
            spec.coordinate(j).to_string(),
            u0[j].re.to_string(),
            u0[j].im.to_string(),
            u1[j].re.to_string(),
            u1[j].im.to_string(),
            s0[j].to_string(),
            s1[j].to_string(),
        ])?;
    }
    writer.flush()?;
    Ok(())
}

/// Reads a CSV written by [`write_csv`]; `epsilon` is attached to the grid.
pub fn read_csv(path: &Path, epsilon: f64) -> anyhow::Result<WaveFunctionTable> {
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(path)
        .with_context(|| format!("opening {}", path.display()))?;
    let headers = reader.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != CSV_HEADER {
        bail!("{}: unexpected columns {:?}", path.display(), headers);
    }
    let mut rows: Vec<[f64; 7]> = Vec::new();
    for record in reader.records() {
        let record = record?;
        let mut row = [0.0; 7];
        for (slot, field) in row.iter_mut().zip(record.iter()) {
            *slot = field
                .trim()
                .parse()
                .with_context(|| format!("{}: bad number `{field}`", path.display()))?;
        }
        rows.push(row);
    }
    if rows.len() < 2 {
        bail!("{}: need at least two rows", path.display());
    }
    let n = rows.len();
    let h = rows[1][0] - rows[0][0];
    let lower = rows[0][0];
    let spec = GridSpec::new(lower, lower + n as f64 * h, n)?;
    for (j, row) in rows.iter().enumerate() {
        if (row[0] - spec.coordinate(j)).abs() > 1e-9 * (1.0 + row[0].abs()) {
            bail!("{}: x column is not uniform at row {j}", path.display());
        }
    }
    let mut grid = WaveFunctionGrid::zeros(spec, epsilon);
    let mut se = [vec![0.0; n], vec![0.0; n]];
    for (j, row) in rows.iter().enumerate() {
        grid.components[0][j] = Complex64::new(row[1], row[2]);
        grid.components[1][j] = Complex64::new(row[3], row[4]);
        se[0][j] = row[5];
        se[1][j] = row[6];
    }
    Ok(WaveFunctionTable {
        grid,
        standard_error: se,
    })
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

/// Everything that determines a reference solution.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReferenceKey {
    pub model: String,
    pub epsilon: f64,
    pub delta: f64,
    pub final_time: f64,
    pub dt: f64,
    pub lower: f64,
    pub upper: f64,
    pub points: usize,
    pub alpha: f64,
    pub center: f64,
    pub momentum: f64,
}

impl ReferenceKey {
    pub fn digest(&self) -> String {
        let canonical = serde_json::to_string(self).expect("key serialises");
        hex::encode(Sha256::digest(canonical.as_bytes()))
    }

    pub fn provenance(&self) -> Vec<String> {
        let mut lines = vec![
            "spectral reference solution (Strang splitting)".to_owned(),
            format!("key {}", self.digest()),
        ];
        lines.push(serde_json::to_string(self).expect("key serialises"));
        lines
    }
}

/// Directory of cached reference solutions, one CSV per key.
#[derive(Debug, Clone)]
pub struct ReferenceCache {
    dir: PathBuf,
}

impl ReferenceCache {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    pub fn path(&self, key: &ReferenceKey) -> PathBuf {
        self.dir.join(format!("reference-{}.csv", key.digest()))
    }

    pub fn load(&self, key: &ReferenceKey) -> Option<WaveFunctionGrid<1>> {
        let path = self.path(key);
        let table = read_csv(&path, key.epsilon).ok()?;
        let expected = GridSpec::<1>::new(key.lower, key.upper, key.points).ok()?;
        (table.grid.spec.points == expected.points).then_some(WaveFunctionGrid {
            spec: expected,
            ..table.grid
        })
    }

    pub fn store(&self, key: &ReferenceKey, grid: &WaveFunctionGrid<1>) -> anyhow::Result<()> {
        fs::create_dir_all(&self.dir)?;
        write_csv(
            &self.path(key),
            &WaveFunctionTable::without_errors(grid.clone()),
            &key.provenance(),
        )
    }
}
