//! Run configuration, drivers and file output.

mod config;
pub mod io;
mod studies;

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

pub use config::{
    blob_hash, AmplitudeUnits, DatumConfig, DatumKind, DiscretizationConfig, MonitorConfig, OutputConfig,
    ResolvedDatum, RunConfig, SchemeName, SnapshotFormat, VariantName,
};
pub use io::{RunInfo, RunMetadata};
pub use studies::{
    classify, run_amplitude_scan, run_amplitude_scan_with, run_deposition_study, run_phase_study, run_tau_study, AmplitudeScan, Classification,
    Coupling, DepositionReport, DepositionRow, PhaseReport, PhaseRow, PhaseStudy, RunDigest, ScanReport, ScanRun,
    TauReport, TauRow, TauStudy,
};

use crate::diagnostics::{calibrate_d, BoundMonitor};
use crate::dynamics::{evolve, EvolveOptions, Evolution, Monitors, Termination};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::fields::{radial_grid, SortedFieldView};
use crate::kernel::KernelWidth;
use crate::phase_space::{decompose, init_weights, validate_initial, ParticleEnsemble, ValidationReport};

/// Name of the marker file left in the output directory of a run that did
/// not reach its end time.
pub const ABORT_MARKER: &str = "ABORTED";
pub const METADATA_FILE: &str = "metadata.toml";
pub const DIAGNOSTICS_FILE: &str = "diagnostics.csv";
pub const VIOLATIONS_FILE: &str = "violations.log";

/// A validated configuration turned into an initial ensemble.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub datum: ResolvedDatum,
    pub validation: ValidationReport,
    pub cells: [usize; 3],
    pub ensemble: ParticleEnsemble,
    pub delta: KernelWidth,
}

impl std::fmt::Debug for ResolvedDatum {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ResolvedDatum")
            .field("datum", &self.datum)
            .field("reference_amplitude", &self.reference_amplitude)
            .field("absolute_amplitude", &self.absolute_amplitude)
            .field("table_hash", &self.table_hash)
            .finish()
    }
}

/// Builds, validates, decomposes and weights the configured datum.
pub fn prepare(config: &RunConfig, exec: Execution) -> Result<Prepared> {
    config.validate()?;
    let datum = config.build_datum()?;
    let quad = config.discretization.quad_order;
    let validation = validate_initial(&datum.datum, quad.max(4))?;
    let decomposition = decompose(&datum.datum, config.discretization.epsilon)?;
    let ensemble = init_weights(&datum.datum, &decomposition, quad, exec)?;
    Ok(Prepared {
        datum,
        validation,
        cells: decomposition.counts(),
        ensemble,
        delta: KernelWidth::new(config.discretization.delta)?,
    })
}

/// Monitors for `config`, calibrating `D` on `ensemble` when it is not given.
pub fn monitors_for(config: &RunConfig, ensemble: &ParticleEnsemble, exec: Execution) -> Result<Monitors> {
    let m = &config.monitor;
    let bounds = if m.bounds {
        let epsilon = config.discretization.epsilon;
        let factor = config.monitor_factor();
        Some(match m.d_bound {
            Some(d) => BoundMonitor::new(d, factor, epsilon)?,
            None => {
                let view = SortedFieldView::build(ensemble, KernelWidth::new(config.discretization.delta)?)?;
                let samples = view.sample_at_particles(exec)?;
                let d = calibrate_d(ensemble, &samples, epsilon);
                BoundMonitor::new(if d > 0.0 { d } else { 1.0 }, factor, epsilon)?
            }
        })
    } else {
        None
    };
    let central_radius = m.central_radius.unwrap_or(config.datum.r[1]);
    Ok(Monitors {
        bounds,
        abort_on_violation: m.abort_on_violation,
        collapse_threshold: Some(m.collapse_threshold),
        near_collapse_margin: m.near_collapse_margin,
        central_radius,
    })
}

/// Evolution options for `config`.
pub fn options_for(config: &RunConfig, monitors: Monitors, exec: Execution) -> EvolveOptions {
    let d = &config.discretization;
    let mut o = EvolveOptions::new(d.scheme.into(), d.tau, d.t_end);
    o.variant = d.variant.into();
    o.record_stride = config.output.record_stride;
    o.snapshot_stride = (config.output.snapshot_stride > 0).then_some(config.output.snapshot_stride);
    o.monitors = monitors;
    o.exec = exec;
    o
}

/// What [`run_single`] produced.
#[derive(Debug)]
pub struct RunSummary {
    pub metadata: RunMetadata,
    pub evolution: Evolution,
}

impl RunSummary {
    pub fn completed(&self) -> bool {
        matches!(self.evolution.termination, Termination::Completed)
    }
}

fn describe(t: &Termination) -> String {
    match t {
        Termination::Completed => "completed".into(),
        Termination::MonitorAbort(v) => format!("monitor abort: {v}"),
        Termination::Collapse { time, compactness } => {
            format!("collapse: max 2m/r = {compactness:.17e} at time {time:.17e}")
        }
        Termination::Failed(e) => format!("error: {e}"),
    }
}

/// Runs one configuration and writes its outputs. A run stopped by a bound
/// monitor or an error still writes everything it has, plus an abort marker,
/// and then returns the error; a run stopped by the collapse threshold
/// returns normally with the marker written.
pub fn run_single(config: &RunConfig, exec: Execution) -> Result<RunSummary> {
    let prepared = prepare(config, exec)?;
    let monitors = monitors_for(config, &prepared.ensemble, exec)?;
    let bound = monitors.bounds.clone();
    let opts = options_for(config, monitors, exec);
    let evolution = evolve(&prepared.ensemble, prepared.delta, &opts);

    let dir = &config.output.directory;
    fs::create_dir_all(dir)?;
    let marker = dir.join(ABORT_MARKER);
    if marker.exists() {
        fs::remove_file(&marker)?;
    }

    let mut diag = BufWriter::new(File::create(dir.join(DIAGNOSTICS_FILE))?);
    io::write_diagnostics_csv(
        evolution.records.iter().map(|r| (r.index, r.time, &r.diagnostics)),
        &mut diag,
    )?;
    diag.flush()?;

    let mut log = BufWriter::new(File::create(dir.join(VIOLATIONS_FILE))?);
    io::write_violations(&evolution.violations, &mut log)?;
    log.flush()?;

    write_snapshots(config, prepared.delta, &evolution, dir, exec)?;

    let last = evolution.records.last();
    let run = RunInfo {
        version: env!("CARGO_PKG_VERSION").to_string(),
        particles: prepared.ensemble.len(),
        cells: prepared.cells,
        reference_amplitude: prepared.datum.reference_amplitude,
        absolute_amplitude: prepared.datum.absolute_amplitude,
        table_hash: prepared.datum.table_hash.clone(),
        weight_quadrature: format!("gauss-legendre {} points per axis", config.discretization.quad_order),
        mu_quadrature: "gauss-legendre 6 points per kink-delimited panel".into(),
        d_bound: bound.as_ref().map_or(f64::INFINITY, |b| b.d_bound),
        monitor_factor: config.monitor_factor(),
        steps: last.map_or(0, |r| r.index),
        final_time: last.map_or(0.0, |r| r.time),
        termination: describe(&evolution.termination),
    };
    let metadata = RunMetadata {
        config: config.clone(),
        run,
    };
    fs::write(dir.join(METADATA_FILE), metadata.to_toml())?;

    if !matches!(evolution.termination, Termination::Completed) {
        fs::write(&marker, format!("{}\n", metadata.run.termination))?;
    }
    match evolution.termination {
        Termination::MonitorAbort(v) => Err(Error::MonitorAbort(v)),
        Termination::Failed(e) => Err(e),
        t => Ok(RunSummary {
            metadata,
            evolution: Evolution {
                termination: t,
                ..evolution
            },
        }),
    }
}

fn write_snapshots(config: &RunConfig, delta: KernelWidth, ev: &Evolution, dir: &Path, exec: Execution) -> Result<()> {
    if config.output.snapshot_stride == 0 {
        return Ok(());
    }
    let snaps = dir.join("snapshots");
    fs::create_dir_all(&snaps)?;
    let profiles = dir.join("profiles");
    let points = config.output.profile_points;
    if points > 0 {
        fs::create_dir_all(&profiles)?;
    }
    let format = config.output.snapshot_format;
    for rec in &ev.records {
        let Some(state) = &rec.snapshot else { continue };
        io::write_snapshot(&snaps.join(io::snapshot_file_name(rec.index, format)), state, format)?;
        if points > 0 {
            let view = SortedFieldView::build(state, delta)?;
            let top = view.r_out().max(config.datum.r[1]) + delta.get();
            let grid = radial_grid(0.0, top, points);
            let mut out = BufWriter::new(File::create(profiles.join(format!("profile_{:07}.csv", rec.index)))?);
            view.write_profile_csv(&grid, exec, &mut out)?;
            out.flush()?;
        }
    }
    Ok(())
}
