//! Convergence studies and the amplitude scan.

use crate::diagnostics::{
    field_error_norms, observed_order, particle_error_norms, structural_defects, FieldNorms, ParticleNorms,
};
use crate::dynamics::{evolve, Evolution, Termination};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::fields::{radial_grid, SortedFieldView};
use crate::phase_space::{continuum_sources_initial, decompose, init_weights, ParticleEnsemble};

use super::{monitors_for, options_for, prepare, RunConfig, SchemeName};

/// Outcome of one run inside a study.
#[derive(Debug, Clone, PartialEq)]
pub struct RunDigest {
    pub label: String,
    pub particles: usize,
    pub steps: usize,
    pub final_time: f64,
    /// Structural properties violated at any recorded step.
    pub structural: Vec<String>,
    /// Whether the angular momenta are bitwise unchanged at the end.
    pub l_preserved: bool,
}

impl RunDigest {
    fn new(label: String, initial: &ParticleEnsemble, ev: &Evolution) -> Self {
        let mut structural: Vec<String> = Vec::new();
        for rec in &ev.records {
            for d in structural_defects(&rec.diagnostics) {
                let msg = format!("{d} at t = {}", rec.time);
                if !structural.iter().any(|s| s.starts_with(d)) {
                    structural.push(msg);
                }
            }
        }
        let same_l = initial.l().len() == ev.last.l().len()
            && initial.l().iter().zip(ev.last.l()).all(|(a, b)| a.to_bits() == b.to_bits());
        Self {
            label,
            particles: initial.len(),
            steps: ev.records.last().map_or(0, |r| r.index),
            final_time: ev.last.time,
            structural,
            l_preserved: same_l,
        }
    }

    pub fn sound(&self) -> bool {
        self.structural.is_empty() && self.l_preserved
    }
}

fn finish(ev: Evolution, label: &str) -> Result<Evolution> {
    match ev.termination {
        Termination::Completed => Ok(ev),
        Termination::Collapse { time, compactness } => Err(Error::InvalidInput(format!(
            "{label}: collapse threshold reached (2m/r = {compactness}) at t = {time}"
        ))),
        _ => ev.into_result(),
    }
}

fn strictly_decreasing(values: &[f64], what: &str) -> Result<()> {
    if values.iter().any(|&v| !(v > 0.0)) || values.windows(2).any(|p| !(p[1] < p[0])) {
        return Err(Error::DegenerateFit(format!("{what} must be positive and strictly decreasing: {values:?}")));
    }
    Ok(())
}

/// Order of `values` against `params`, `None` when every value is zero.
fn order_or_exact(values: &[f64], params: &[f64]) -> Result<Option<f64>> {
    if values.iter().all(|&v| v == 0.0) {
        Ok(None)
    } else {
        observed_order(values, params).map(Some)
    }
}

/// Two-phase runs at several `τ` on one decomposition.
#[derive(Debug, Clone, PartialEq)]
pub struct TauStudy {
    pub base: RunConfig,
    pub taus: Vec<f64>,
    /// The RK4 reference uses `dt = min τ / reference_refinement`.
    pub reference_refinement: usize,
}

impl TauStudy {
    /// `τ ∈ {δ/4, δ/8, δ/16}` on `base`.
    pub fn standard(base: RunConfig) -> Self {
        let d = base.discretization.delta;
        Self {
            base,
            taus: vec![d / 4.0, d / 8.0, d / 16.0],
            reference_refinement: 10,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TauRow {
    pub tau: f64,
    pub norms: ParticleNorms,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TauReport {
    pub rows: Vec<TauRow>,
    /// Observed order of the summed norms; `None` when all errors vanish.
    pub order: Option<f64>,
    pub runs: Vec<RunDigest>,
    pub pass: bool,
}

/// Acceptance window for the `τ` order.
pub const TAU_ORDER_RANGE: (f64, f64) = (0.8, 1.3);

pub fn run_tau_study(spec: &TauStudy, exec: Execution) -> Result<TauReport> {
    strictly_decreasing(&spec.taus, "time steps")?;
    let prepared = prepare(&spec.base, exec)?;
    let initial = &prepared.ensemble;
    let monitors = monitors_for(&spec.base, initial, exec)?;
    let t_end = spec.base.discretization.t_end;
    let epsilon = spec.base.discretization.epsilon;
    let refine = spec.reference_refinement.max(1);
    let tau_min = *spec.taus.last().unwrap();

    let mut reference_cfg = spec.base.clone();
    reference_cfg.discretization.scheme = SchemeName::SemiRk4;
    reference_cfg.discretization.tau = tau_min / refine as f64;
    reference_cfg.output.snapshot_stride = refine;
    reference_cfg.output.record_stride = 1;
    let opts = options_for(&reference_cfg, monitors.clone(), exec);
    let reference = finish(evolve(initial, prepared.delta, &opts), "reference")?;
    let mut runs = vec![RunDigest::new(format!("semi_rk4 dt={}", opts.step), initial, &reference)];
    let ref_snaps: Vec<ParticleEnsemble> = reference.snapshots().cloned().collect();

    let mut rows = Vec::with_capacity(spec.taus.len());
    for &tau in &spec.taus {
        let mut cfg = spec.base.clone();
        cfg.discretization.scheme = SchemeName::FullEuler;
        cfg.discretization.tau = tau;
        cfg.output.snapshot_stride = 1;
        cfg.output.record_stride = 1;
        let opts = options_for(&cfg, monitors.clone(), exec);
        let ev = finish(evolve(initial, prepared.delta, &opts), "two-phase run")?;
        runs.push(RunDigest::new(format!("full_euler tau={tau}"), initial, &ev));
        let snaps: Vec<ParticleEnsemble> = ev.snapshots().cloned().collect();
        let norms = particle_error_norms(&snaps, &ref_snaps, t_end, epsilon)?;
        rows.push(TauRow { tau, norms });
    }
    let totals: Vec<f64> = rows.iter().map(|r| r.norms.total()).collect();
    let order = order_or_exact(&totals, &spec.taus)?;
    let in_range = order.is_none_or(|p| p >= TAU_ORDER_RANGE.0 && p <= TAU_ORDER_RANGE.1);
    let pass = in_range && runs.iter().all(RunDigest::sound);
    Ok(TauReport { rows, order, runs, pass })
}

/// How `ε` follows `δ` along a refinement ladder.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Coupling {
    /// `ε = δ²`
    Square,
    /// `ε = δ³`
    Cube,
}

impl Coupling {
    pub fn epsilon(self, delta: f64) -> f64 {
        match self {
            Coupling::Square => delta * delta,
            Coupling::Cube => delta * delta * delta,
        }
    }
}

/// RK4 runs along a ladder of kernel widths, compared through their fields.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseStudy {
    pub base: RunConfig,
    pub deltas: Vec<f64>,
    pub coupling: Coupling,
    /// `dt = tau_ratio · δ`.
    pub tau_ratio: f64,
    /// Times at which the fields are compared; each must be a whole number
    /// of steps for every ladder entry.
    pub sample_times: Vec<f64>,
    pub grid_points: usize,
}

impl PhaseStudy {
    /// `δ ∈ {0.2, 0.1, 0.05}`, `ε = δ²`, `dt = δ/4`, fields compared at
    /// `t ∈ {0, T/2, T}`.
    pub fn standard(base: RunConfig) -> Self {
        let t = base.discretization.t_end;
        Self {
            base,
            deltas: vec![0.2, 0.1, 0.05],
            coupling: Coupling::Square,
            tau_ratio: 0.25,
            sample_times: vec![0.0, 0.5 * t, t],
            grid_points: 801,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhaseRow {
    pub delta: f64,
    pub epsilon: f64,
    pub particles: usize,
    /// Largest gap to the reference over the sample times.
    pub norms: FieldNorms,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhaseReport {
    /// One row per ladder entry; the last is the reference (zero gaps).
    pub rows: Vec<PhaseRow>,
    pub metric_order: Option<f64>,
    pub source_order: Option<f64>,
    /// The orders rest on only two points.
    pub low_confidence: bool,
    /// Whether the source order is gated (only under `ε = δ³`).
    pub source_gated: bool,
    pub runs: Vec<RunDigest>,
    pub pass: bool,
}

pub const METRIC_ORDER_MIN: f64 = 0.7;
pub const SOURCE_ORDER_MIN: f64 = 0.8;

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

pub fn run_phase_study(spec: &PhaseStudy, exec: Execution) -> Result<PhaseReport> {
    strictly_decreasing(&spec.deltas, "kernel widths")?;
    if spec.deltas.len() == 2 {
        return Err(Error::DegenerateFit(
            "a two-entry ladder leaves one gap against the reference; use at least three".into(),
        ));
    }
    if !(spec.tau_ratio > 0.0) || spec.grid_points < 2 {
        return Err(Error::InvalidConfig("tau_ratio must be positive and grid_points at least 2".into()));
    }
    let mut runs = Vec::new();
    let mut digests = Vec::new();
    for &delta in &spec.deltas {
        let mut cfg = spec.base.clone();
        cfg.discretization.delta = delta;
        cfg.discretization.epsilon = spec.coupling.epsilon(delta);
        cfg.discretization.scheme = SchemeName::SemiRk4;
        cfg.discretization.tau = spec.tau_ratio * delta;
        let dt = cfg.discretization.tau;
        let mut stride = 0;
        for &t in &spec.sample_times {
            let k = (t / dt).round();
            if (k * dt - t).abs() > 1e-9 * t.max(1.0) || t > cfg.discretization.t_end + 1e-12 {
                return Err(Error::InvalidConfig(format!("sample time {t} is not a step of dt = {dt} within T")));
            }
            stride = gcd(stride, k as usize);
        }
        cfg.output.snapshot_stride = stride.max(1);
        cfg.output.record_stride = 1;
        let prepared = prepare(&cfg, exec)?;
        let monitors = monitors_for(&cfg, &prepared.ensemble, exec)?;
        let opts = options_for(&cfg, monitors, exec);
        let ev = finish(evolve(&prepared.ensemble, prepared.delta, &opts), "ladder run")?;
        digests.push(RunDigest::new(format!("semi_rk4 delta={delta}"), &prepared.ensemble, &ev));
        let snaps: Vec<ParticleEnsemble> = spec
            .sample_times
            .iter()
            .filter_map(|&t| ev.snapshots().find(|s| (s.time - t).abs() <= 1e-9 * t.max(1.0)).cloned())
            .collect();
        if snaps.len() != spec.sample_times.len() {
            return Err(Error::DecompositionMismatch("missing snapshot at a sample time".into()));
        }
        runs.push((prepared.delta, cfg.discretization.epsilon, prepared.ensemble.len(), snaps));
    }

    let (ref_delta, _, _, ref_snaps) = runs.last().unwrap();
    let delta_max = spec.deltas[0];
    let mut rows = Vec::new();
    for (delta, epsilon, particles, snaps) in &runs {
        let mut worst = FieldNorms::default();
        for (a, b) in snaps.iter().zip(ref_snaps) {
            let top = a.r.iter().chain(&b.r).fold(0.0f64, |m, &r| m.max(r)) + 2.0 * delta_max;
            let grid = radial_grid(0.0, top, spec.grid_points);
            worst = worst.max(field_error_norms((a, *delta), (b, *ref_delta), &grid, exec)?);
        }
        rows.push(PhaseRow {
            delta: delta.get(),
            epsilon: *epsilon,
            particles: *particles,
            norms: worst,
        });
    }
    let fitted = &rows[..rows.len() - 1];
    let params: Vec<f64> = fitted.iter().map(|r| r.delta).collect();
    let (metric_order, source_order) = if fitted.is_empty() {
        (None, None)
    } else {
        let metric: Vec<f64> = fitted.iter().map(|r| r.norms.metric()).collect();
        let sources: Vec<f64> = fitted.iter().map(|r| r.norms.sources()).collect();
        (order_or_exact(&metric, &params)?, order_or_exact(&sources, &params)?)
    };
    let low_confidence = fitted.len() == 2;
    let source_gated = spec.coupling == Coupling::Cube;
    let pass = metric_order.is_none_or(|p| p >= METRIC_ORDER_MIN)
        && (!source_gated || source_order.is_none_or(|p| p >= SOURCE_ORDER_MIN))
        && digests.iter().all(RunDigest::sound);
    Ok(PhaseReport {
        rows,
        metric_order,
        source_order,
        low_confidence,
        source_gated,
        runs: digests,
        pass,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DepositionRow {
    pub delta: f64,
    pub epsilon: f64,
    pub particles: usize,
    /// `‖ρ(0) - ρ̄(0)‖_∞` on the grid.
    pub rho_gap: f64,
    pub norms: FieldNorms,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DepositionReport {
    pub rows: Vec<DepositionRow>,
    pub order: Option<f64>,
    pub pass: bool,
}

/// Quadrature order of the continuum sources in the deposition study.
const CONTINUUM_ORDER: usize = 8;

/// Compares the deposited initial sources with the continuum ones along a
/// ladder of kernel widths.
pub fn run_deposition_study(
    base: &RunConfig,
    deltas: &[f64],
    coupling: Coupling,
    grid_points: usize,
    exec: Execution,
) -> Result<DepositionReport> {
    strictly_decreasing(deltas, "kernel widths")?;
    let datum = base.build_datum()?.datum;
    let top = datum.support().r_max() + 2.0 * deltas[0];
    let grid = radial_grid(0.0, top, grid_points.max(2));
    let exact = exec.map(grid.len(), |i| continuum_sources_initial(&datum, grid[i], CONTINUUM_ORDER));
    let mut rows = Vec::new();
    for &delta in deltas {
        let epsilon = coupling.epsilon(delta);
        let decomposition = decompose(&datum, epsilon)?;
        let ensemble = init_weights(&datum, &decomposition, base.discretization.quad_order, exec)?;
        let view = SortedFieldView::build(&ensemble, crate::KernelWidth::new(delta)?)?;
        let deposited = exec.map(grid.len(), |i| view.deposit(grid[i]));
        let mut norms = FieldNorms::default();
        for (a, b) in deposited.iter().zip(&exact) {
            norms.rho = norms.rho.max((a.rho - b.rho).abs());
            norms.p = norms.p.max((a.p - b.p).abs());
            norms.j = norms.j.max((a.j - b.j).abs());
        }
        rows.push(DepositionRow {
            delta,
            epsilon,
            particles: ensemble.len(),
            rho_gap: norms.rho,
            norms,
        });
    }
    let gaps: Vec<f64> = rows.iter().map(|r| r.rho_gap).collect();
    let order = order_or_exact(&gaps, deltas)?;
    Ok(DepositionReport {
        pass: order.is_none_or(|p| p >= METRIC_ORDER_MIN),
        rows,
        order,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Classification {
    Disperse,
    Collapse,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScanRun {
    /// In the configured amplitude units.
    pub amplitude: f64,
    pub class: Classification,
    pub reason: String,
    pub max_compactness: f64,
    pub peak_central_rho: f64,
    pub final_central_rho: f64,
}

/// Runs `base` at `amplitude` and classifies the outcome.
///
/// Collapse: trapped surface initially or during the run, or the collapse
/// threshold on `max 2m̄/r` reached. Dispersal: the run completes without
/// bound violations and the final central peak density is below the
/// configured fraction of its running maximum. Anything else is
/// [`Error::Unclassified`].
pub fn classify(base: &RunConfig, amplitude: f64, exec: Execution) -> Result<ScanRun> {
    let mut cfg = base.clone();
    cfg.datum.amplitude = amplitude;
    cfg.monitor.abort_on_violation = false;
    cfg.output.snapshot_stride = 0;
    let collapse = |reason: String, c: f64| ScanRun {
        amplitude,
        class: Classification::Collapse,
        reason,
        max_compactness: c,
        peak_central_rho: f64::NAN,
        final_central_rho: f64::NAN,
    };
    let prepared = match prepare(&cfg, exec) {
        Ok(p) => p,
        Err(e @ Error::TrappedSurfaceAtStart { .. }) => return Ok(collapse(e.to_string(), f64::NAN)),
        Err(e) => return Err(e),
    };
    let monitors = match monitors_for(&cfg, &prepared.ensemble, exec) {
        Ok(m) => m,
        Err(e @ Error::TrappedSurface { .. }) => return Ok(collapse(e.to_string(), f64::NAN)),
        Err(e) => return Err(e),
    };
    let opts = options_for(&cfg, monitors, exec);
    let ev = evolve(&prepared.ensemble, prepared.delta, &opts);
    let max_c = ev.records.iter().map(|r| r.diagnostics.max_compactness).fold(0.0, f64::max);
    let peak = ev.records.iter().map(|r| r.diagnostics.central_max_rho).fold(0.0, f64::max);
    let last = ev.records.last().map_or(0.0, |r| r.diagnostics.central_max_rho);
    match ev.termination {
        Termination::Collapse { time, compactness } => Ok(collapse(
            format!("max 2m/r = {compactness:.6} at t = {time:.6}"),
            max_c.max(compactness),
        )),
        Termination::Failed(e @ Error::TrappedSurface { .. }) => Ok(collapse(e.to_string(), max_c)),
        Termination::Completed if ev.violations.is_empty() && last <= cfg.monitor.dispersal_fraction * peak => {
            Ok(ScanRun {
                amplitude,
                class: Classification::Disperse,
                reason: format!("central density fell to {last:.3e} of peak {peak:.3e}"),
                max_compactness: max_c,
                peak_central_rho: peak,
                final_central_rho: last,
            })
        }
        _ => Err(Error::Unclassified { amplitude }),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AmplitudeScan {
    pub base: RunConfig,
    pub a_lo: f64,
    pub a_hi: f64,
    pub steps: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScanReport {
    pub runs: Vec<ScanRun>,
    /// Final `(dispersing, collapsing)` amplitudes.
    pub bracket: (f64, f64),
}

/// Bisects between a dispersing and a collapsing amplitude.
pub fn run_amplitude_scan(spec: &AmplitudeScan, exec: Execution) -> Result<ScanReport> {
    run_amplitude_scan_with(spec, exec, |_| {})
}

/// [`run_amplitude_scan`], handing each classified run to `progress` as soon
/// as it is known.
pub fn run_amplitude_scan_with(
    spec: &AmplitudeScan,
    exec: Execution,
    mut progress: impl FnMut(&ScanRun),
) -> Result<ScanReport> {
    if !(spec.a_lo >= 0.0 && spec.a_lo < spec.a_hi) {
        return Err(Error::InvalidConfig(format!("need 0 <= a_lo < a_hi, got {} and {}", spec.a_lo, spec.a_hi)));
    }
    let lo = classify(&spec.base, spec.a_lo, exec)?;
    progress(&lo);
    if lo.class != Classification::Disperse {
        return Err(Error::BracketNotVerified {
            amplitude: spec.a_lo,
            expected: "disperse",
        });
    }
    let hi = classify(&spec.base, spec.a_hi, exec)?;
    progress(&hi);
    if hi.class != Classification::Collapse {
        return Err(Error::BracketNotVerified {
            amplitude: spec.a_hi,
            expected: "collapse",
        });
    }
    let mut runs = vec![lo, hi];
    let (mut a, mut b) = (spec.a_lo, spec.a_hi);
    for _ in 0..spec.steps {
        let mid = 0.5 * (a + b);
        let run = classify(&spec.base, mid, exec)?;
        progress(&run);
        match run.class {
            Classification::Disperse => a = mid,
            Classification::Collapse => b = mid,
        }
        runs.push(run);
    }
    Ok(ScanReport { runs, bracket: (a, b) })
}
