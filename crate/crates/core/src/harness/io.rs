//! Snapshot, diagnostics and metadata files.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::{DatumConfig, DiscretizationConfig, MonitorConfig, OutputConfig, RunConfig, SnapshotFormat};
use crate::diagnostics::{StepDiagnostics, Violation};
use crate::error::{Error, Result};
use crate::phase_space::ParticleEnsemble;

/// Magic bytes of the binary snapshot format.
pub const SNAPSHOT_MAGIC: &[u8; 4] = b"VEPS";
const SNAPSHOT_VERSION: u32 = 1;

/// Writes `(n, R, W, L, M)` rows preceded by a `# time = t` line.
pub fn write_snapshot_csv<W: Write>(ensemble: &ParticleEnsemble, mut out: W) -> Result<()> {
    writeln!(out, "# time = {:.17e}", ensemble.time)?;
    writeln!(out, "n,R,W,L,M")?;
    let l = ensemble.l();
    for n in 0..ensemble.len() {
        writeln!(
            out,
            "{n},{:.17e},{:.17e},{:.17e},{:.17e}",
            ensemble.r[n], ensemble.w[n], l[n], ensemble.m[n]
        )?;
    }
    Ok(())
}

pub fn read_snapshot_csv<R: Read>(input: R) -> Result<ParticleEnsemble> {
    let mut time = 0.0;
    let (mut r, mut w, mut l, mut m) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for (k, line) in BufReader::new(input).lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if let Some(rest) = line.strip_prefix("# time =") {
            time = parse(rest.trim(), k)?;
            continue;
        }
        if line.is_empty() || line.starts_with('#') || line.starts_with("n,") {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 5 {
            return Err(Error::InvalidInput(format!("snapshot line {}: expected 5 fields", k + 1)));
        }
        r.push(parse(fields[1], k)?);
        w.push(parse(fields[2], k)?);
        l.push(parse(fields[3], k)?);
        m.push(parse(fields[4], k)?);
    }
    ParticleEnsemble::new(r, w, l, m, time)
}

fn parse(s: &str, line: usize) -> Result<f64> {
    s.trim()
        .parse()
        .map_err(|_| Error::InvalidInput(format!("snapshot line {}: bad number {s:?}", line + 1)))
}

/// Little-endian layout: magic, `u32` version, `u64` count, `f64` time, then
/// the `R`, `W`, `L` and `M` arrays.
pub fn write_snapshot_binary<W: Write>(ensemble: &ParticleEnsemble, mut out: W) -> Result<()> {
    out.write_all(SNAPSHOT_MAGIC)?;
    out.write_all(&SNAPSHOT_VERSION.to_le_bytes())?;
    out.write_all(&(ensemble.len() as u64).to_le_bytes())?;
    out.write_all(&ensemble.time.to_le_bytes())?;
    for array in [&ensemble.r[..], &ensemble.w[..], ensemble.l(), &ensemble.m[..]] {
        for x in array {
            out.write_all(&x.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_snapshot_binary<R: Read>(mut input: R) -> Result<ParticleEnsemble> {
    let mut head = [0u8; 24];
    input.read_exact(&mut head)?;
    if &head[..4] != SNAPSHOT_MAGIC {
        return Err(Error::InvalidInput("not a binary snapshot".into()));
    }
    let version = u32::from_le_bytes(head[4..8].try_into().unwrap());
    if version != SNAPSHOT_VERSION {
        return Err(Error::InvalidInput(format!("unsupported snapshot version {version}")));
    }
    let n = u64::from_le_bytes(head[8..16].try_into().unwrap()) as usize;
    let time = f64::from_le_bytes(head[16..24].try_into().unwrap());
    let mut arrays = Vec::with_capacity(4);
    let mut buf = [0u8; 8];
    for _ in 0..4 {
        let mut v = Vec::with_capacity(n);
        for _ in 0..n {
            input.read_exact(&mut buf)?;
            v.push(f64::from_le_bytes(buf));
        }
        arrays.push(v);
    }
    let m = arrays.pop().unwrap();
    let l = arrays.pop().unwrap();
    let w = arrays.pop().unwrap();
    let r = arrays.pop().unwrap();
    ParticleEnsemble::new(r, w, l, m, time)
}

/// Reads a snapshot in either format, recognizing binary files by their magic.
pub fn read_snapshot(path: &Path) -> Result<ParticleEnsemble> {
    let bytes = fs::read(path)?;
    if bytes.starts_with(SNAPSHOT_MAGIC) {
        read_snapshot_binary(&bytes[..])
    } else {
        read_snapshot_csv(&bytes[..])
    }
}

pub fn snapshot_file_name(index: usize, format: SnapshotFormat) -> String {
    match format {
        SnapshotFormat::Csv => format!("snapshot_{index:07}.csv"),
        SnapshotFormat::Binary => format!("snapshot_{index:07}.bin"),
    }
}

pub fn write_snapshot(path: &Path, ensemble: &ParticleEnsemble, format: SnapshotFormat) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    match format {
        SnapshotFormat::Csv => write_snapshot_csv(ensemble, &mut out)?,
        SnapshotFormat::Binary => write_snapshot_binary(ensemble, &mut out)?,
    }
    out.flush()?;
    Ok(())
}

pub fn write_diagnostics_csv<'a, W, I>(rows: I, mut out: W) -> Result<()>
where
    W: Write,
    I: IntoIterator<Item = (usize, f64, &'a StepDiagnostics)>,
{
    writeln!(out, "{}", StepDiagnostics::CSV_HEADER)?;
    for (step, time, d) in rows {
        writeln!(out, "{}", d.csv_row(step, time))?;
    }
    Ok(())
}

pub fn write_violations<W: Write>(violations: &[Violation], mut out: W) -> Result<()> {
    for v in violations {
        writeln!(out, "{v}")?;
    }
    Ok(())
}

/// Facts about a run that are not part of its configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunInfo {
    pub version: String,
    pub particles: usize,
    pub cells: [usize; 3],
    pub reference_amplitude: f64,
    pub absolute_amplitude: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub table_hash: Option<String>,
    pub weight_quadrature: String,
    pub mu_quadrature: String,
    pub d_bound: f64,
    pub monitor_factor: f64,
    pub steps: usize,
    pub final_time: f64,
    pub termination: String,
}

/// Contents of `metadata.toml`: the full configuration plus a `[run]` table.
#[derive(Debug, Clone, PartialEq)]
pub struct RunMetadata {
    pub config: RunConfig,
    pub run: RunInfo,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MetadataFile {
    datum: DatumConfig,
    discretization: DiscretizationConfig,
    monitor: MonitorConfig,
    output: OutputConfig,
    run: RunInfo,
}

impl RunMetadata {
    pub fn to_toml(&self) -> String {
        let c = self.config.clone();
        let file = MetadataFile {
            datum: c.datum,
            discretization: c.discretization,
            monitor: c.monitor,
            output: c.output,
            run: self.run.clone(),
        };
        toml::to_string(&file).expect("metadata serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let f: MetadataFile = toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        let config = RunConfig {
            datum: f.datum,
            discretization: f.discretization,
            monitor: f.monitor,
            output: f.output,
        };
        config.validate()?;
        Ok(Self { config, run: f.run })
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_toml(&fs::read_to_string(path)?)
    }
}
