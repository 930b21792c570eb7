//! Conserved quantities, run-time bound monitors, error norms between runs
//! and observed convergence orders.

use std::fmt;

use twofloat::TwoFloat;

use crate::dynamics::Monitors;
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::fields::{FieldSample, SortedFieldView};
use crate::kernel::KernelWidth;
use crate::phase_space::ParticleEnsemble;

/// ADM mass `Σ Ē_n M̄_n`.
pub fn adm_mass(view: &SortedFieldView) -> f64 {
    view.total_em()
}

/// Discrete particle number `Σ e^{λ̄(R̄_n)} M̄_n`, from samples at the particles.
pub fn particle_number(ensemble: &ParticleEnsemble, samples: &[FieldSample]) -> f64 {
    let total = ensemble
        .m
        .iter()
        .zip(samples)
        .fold(TwoFloat::from(0.0), |acc, (&m, s)| acc + TwoFloat::new_mul(s.lam.exp(), m));
    f64::from(total)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BoundQuantity {
    /// `ε⁻³ M̄_n`
    WeightScale,
    Radius,
    InverseRadius,
    Momentum,
    /// `e^{2λ̄}` at a particle
    Metric,
    /// `ρ̄` at a particle
    Density,
}

impl BoundQuantity {
    pub const ALL: [BoundQuantity; 6] = [
        BoundQuantity::WeightScale,
        BoundQuantity::Radius,
        BoundQuantity::InverseRadius,
        BoundQuantity::Momentum,
        BoundQuantity::Metric,
        BoundQuantity::Density,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BoundQuantity::WeightScale => "weight_scale",
            BoundQuantity::Radius => "radius",
            BoundQuantity::InverseRadius => "inverse_radius",
            BoundQuantity::Momentum => "momentum",
            BoundQuantity::Metric => "metric",
            BoundQuantity::Density => "density",
        }
    }

    fn value(self, ensemble: &ParticleEnsemble, samples: &[FieldSample], epsilon: f64, n: usize) -> f64 {
        match self {
            BoundQuantity::WeightScale => ensemble.m[n] / (epsilon * epsilon * epsilon),
            BoundQuantity::Radius => ensemble.r[n],
            BoundQuantity::InverseRadius => 1.0 / ensemble.r[n],
            BoundQuantity::Momentum => ensemble.w[n].abs(),
            BoundQuantity::Metric => samples[n].e2lam(),
            BoundQuantity::Density => samples[n].rho,
        }
    }
}

impl fmt::Display for BoundQuantity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A monitored quantity exceeding its threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub quantity: BoundQuantity,
    pub index: Option<usize>,
    pub value: f64,
    pub threshold: f64,
    pub time: f64,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let index = self.index.map_or_else(|| "-".to_string(), |i| i.to_string());
        write!(
            f,
            "time={:.17e} quantity={} index={} value={:.17e} threshold={:.17e}",
            self.time, self.quantity, index, self.value, self.threshold
        )
    }
}

/// Thresholds `factor · D` for the quantities in `checks`.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundMonitor {
    pub d_bound: f64,
    pub factor: f64,
    /// Cell fineness used to scale the weights.
    pub epsilon: f64,
    pub checks: Vec<BoundQuantity>,
}

/// Margin applied to the initial maxima when calibrating `D`.
pub const SELF_CALIBRATION_MARGIN: f64 = 1.5;
pub const SEMI_FACTOR: f64 = 2.0;
pub const FULL_FACTOR: f64 = 4.0;

impl BoundMonitor {
    pub fn new(d_bound: f64, factor: f64, epsilon: f64) -> Result<Self> {
        if !(d_bound > 0.0) || !(factor > 0.0) || !(epsilon > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "bound monitor needs positive D, factor and epsilon (got {d_bound}, {factor}, {epsilon})"
            )));
        }
        Ok(Self {
            d_bound,
            factor,
            epsilon,
            checks: BoundQuantity::ALL.to_vec(),
        })
    }

    /// `D` set to the margin times the largest monitored quantity of the
    /// given state.
    pub fn self_calibrated(
        ensemble: &ParticleEnsemble,
        samples: &[FieldSample],
        epsilon: f64,
        factor: f64,
    ) -> Result<Self> {
        let d = calibrate_d(ensemble, samples, epsilon);
        Self::new(if d > 0.0 { d } else { 1.0 }, factor, epsilon)
    }

    pub fn threshold(&self) -> f64 {
        self.factor * self.d_bound
    }
}

/// Margin times the largest monitored quantity, zero for an empty ensemble.
pub fn calibrate_d(ensemble: &ParticleEnsemble, samples: &[FieldSample], epsilon: f64) -> f64 {
    let mut d = 0.0f64;
    for q in BoundQuantity::ALL {
        for n in 0..ensemble.len() {
            d = d.max(q.value(ensemble, samples, epsilon, n));
        }
    }
    SELF_CALIBRATION_MARGIN * d
}

/// All violations of the monitor's bounds, ordered by quantity then index.
pub fn check_bounds(ensemble: &ParticleEnsemble, samples: &[FieldSample], monitor: &BoundMonitor) -> Vec<Violation> {
    let threshold = monitor.threshold();
    let mut out = Vec::new();
    for &q in &monitor.checks {
        for n in 0..ensemble.len() {
            let value = q.value(ensemble, samples, monitor.epsilon, n);
            if !(value <= threshold) {
                out.push(Violation {
                    quantity: q,
                    index: Some(n),
                    value,
                    threshold,
                    time: ensemble.time,
                });
            }
        }
    }
    out
}

/// Per-step summary of one state.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StepDiagnostics {
    pub adm_mass: f64,
    pub particle_number: f64,
    /// `sup 2m̄/r` over all radii, or over the particle radii when no field
    /// view was available.
    pub max_compactness: f64,
    pub max_rho: f64,
    /// `max ρ̄` over particles inside the monitors' central radius.
    pub central_max_rho: f64,
    pub min_r: f64,
    pub max_r: f64,
    pub max_abs_w: f64,
    pub min_m: f64,
    pub max_abs_rdot: f64,
    pub min_lam: f64,
    pub max_mu: f64,
    pub max_lam_plus_mu: f64,
    pub max_e2lam: f64,
    pub near_collapse: bool,
}

impl StepDiagnostics {
    pub const CSV_HEADER: &'static str = "step,time,adm_mass,particle_number,max_2m_over_r,max_rho,central_max_rho,\
min_r,max_r,max_abs_w,min_m,max_abs_rdot,min_lam,max_mu,max_lam_plus_mu,max_e2lam,near_collapse";

    pub fn csv_row(&self, step: usize, time: f64) -> String {
        let v = [
            time,
            self.adm_mass,
            self.particle_number,
            self.max_compactness,
            self.max_rho,
            self.central_max_rho,
            self.min_r,
            self.max_r,
            self.max_abs_w,
            self.min_m,
            self.max_abs_rdot,
            self.min_lam,
            self.max_mu,
            self.max_lam_plus_mu,
            self.max_e2lam,
        ];
        let mut row = step.to_string();
        for x in v {
            row.push_str(&format!(",{x:.17e}"));
        }
        row.push_str(if self.near_collapse { ",1" } else { ",0" });
        row
    }
}

/// Summarizes a state from its field samples.
pub fn observe(
    ensemble: &ParticleEnsemble,
    view: Option<&SortedFieldView>,
    samples: &[FieldSample],
    monitors: &Monitors,
    exec: Execution,
) -> StepDiagnostics {
    if ensemble.is_empty() {
        return StepDiagnostics::default();
    }
    let adm = match view {
        Some(v) => adm_mass(v),
        None => f64::from(
            (0..ensemble.len()).fold(TwoFloat::from(0.0), |a, n| a + TwoFloat::new_mul(ensemble.energy(n), ensemble.m[n])),
        ),
    };
    let mut d = StepDiagnostics {
        adm_mass: adm,
        particle_number: particle_number(ensemble, samples),
        min_r: f64::INFINITY,
        min_m: f64::INFINITY,
        min_lam: f64::INFINITY,
        max_mu: f64::NEG_INFINITY,
        max_lam_plus_mu: f64::NEG_INFINITY,
        ..StepDiagnostics::default()
    };
    for (n, s) in samples.iter().enumerate() {
        let r = ensemble.r[n];
        let w = ensemble.w[n];
        d.max_compactness = d.max_compactness.max(2.0 * s.m / r);
        d.max_rho = d.max_rho.max(s.rho);
        if r <= monitors.central_radius {
            d.central_max_rho = d.central_max_rho.max(s.rho);
        }
        d.min_r = d.min_r.min(r);
        d.max_r = d.max_r.max(r);
        d.max_abs_w = d.max_abs_w.max(w.abs());
        d.min_m = d.min_m.min(ensemble.m[n]);
        d.max_abs_rdot = d.max_abs_rdot.max((s.lapse_ratio() * w / ensemble.energy(n)).abs());
        d.min_lam = d.min_lam.min(s.lam);
        d.max_mu = d.max_mu.max(s.mu);
        d.max_lam_plus_mu = d.max_lam_plus_mu.max(s.lam + s.mu);
        d.max_e2lam = d.max_e2lam.max(s.e2lam());
    }
    if let Some(v) = view {
        d.max_compactness = d.max_compactness.max(v.max_compactness(exec));
    }
    d.near_collapse = 1.0 - d.max_compactness < monitors.near_collapse_margin;
    d
}

/// Tolerance on the sign conditions of the metric exponents.
pub const METRIC_SIGN_TOLERANCE: f64 = 1e-10;
/// Tolerance on `|Ṙ̄| ≤ 1`.
pub const SPEED_TOLERANCE: f64 = 1e-12;

/// Which structural properties a state summary violates: `λ̄ ≥ 0`, `μ̄ ≤ 0`,
/// `λ̄ + μ̄ ≤ 0`, `|Ṙ̄| ≤ 1` and `M̄ ≥ 0`.
pub fn structural_defects(d: &StepDiagnostics) -> Vec<&'static str> {
    let mut out = Vec::new();
    if d.min_lam < -METRIC_SIGN_TOLERANCE {
        out.push("lambda < 0");
    }
    if d.max_mu > METRIC_SIGN_TOLERANCE {
        out.push("mu > 0");
    }
    if d.max_lam_plus_mu > METRIC_SIGN_TOLERANCE {
        out.push("lambda + mu > 0");
    }
    if d.max_abs_rdot > 1.0 + SPEED_TOLERANCE {
        out.push("|dR/dt| > 1");
    }
    if d.min_m < 0.0 {
        out.push("negative weight");
    }
    out
}

/// Running-maximum particle error norms up to some time.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ParticleNorms {
    pub r: f64,
    pub w: f64,
    /// Scaled by `ε⁻³`.
    pub m: f64,
    /// Matched snapshot times that contributed.
    pub samples: usize,
}

impl ParticleNorms {
    pub fn total(&self) -> f64 {
        self.r + self.w + self.m
    }
}

const TIME_MATCH: f64 = 1e-9;

/// Running maxima over matched snapshot times `s ≤ t` of the per-particle
/// gaps between two runs on the same decomposition.
pub fn particle_error_norms(
    run_a: &[ParticleEnsemble],
    run_b: &[ParticleEnsemble],
    t: f64,
    epsilon: f64,
) -> Result<ParticleNorms> {
    let scale = 1.0 / (epsilon * epsilon * epsilon);
    let mut norms = ParticleNorms::default();
    let mut j = 0;
    for a in run_a.iter().filter(|a| a.time <= t + TIME_MATCH) {
        while j < run_b.len() && run_b[j].time < a.time - TIME_MATCH {
            j += 1;
        }
        let Some(b) = run_b.get(j).filter(|b| (b.time - a.time).abs() <= TIME_MATCH) else {
            continue;
        };
        if a.len() != b.len() || a.l() != b.l() {
            return Err(Error::DecompositionMismatch(format!(
                "runs differ in particle count or angular momenta ({} vs {})",
                a.len(),
                b.len()
            )));
        }
        for n in 0..a.len() {
            norms.r = norms.r.max((a.r[n] - b.r[n]).abs());
            norms.w = norms.w.max((a.w[n] - b.w[n]).abs());
            norms.m = norms.m.max(scale * (a.m[n] - b.m[n]).abs());
        }
        norms.samples += 1;
    }
    if norms.samples == 0 {
        return Err(Error::DecompositionMismatch(format!("no common snapshot times up to t = {t}")));
    }
    Ok(norms)
}

/// Sup-norm gaps of the field quantities on a radial grid.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FieldNorms {
    pub m: f64,
    pub lam: f64,
    pub mu: f64,
    pub rho: f64,
    pub p: f64,
    pub j: f64,
}

impl FieldNorms {
    pub fn metric(&self) -> f64 {
        self.m.max(self.lam).max(self.mu)
    }

    pub fn sources(&self) -> f64 {
        self.rho.max(self.p).max(self.j)
    }

    pub fn max(self, other: Self) -> Self {
        Self {
            m: self.m.max(other.m),
            lam: self.lam.max(other.lam),
            mu: self.mu.max(other.mu),
            rho: self.rho.max(other.rho),
            p: self.p.max(other.p),
            j: self.j.max(other.j),
        }
    }
}

/// Field gaps between two runs, each given by an ensemble and its kernel
/// width; the particle indexing of the two may differ.
pub fn field_error_norms(
    run_a: (&ParticleEnsemble, KernelWidth),
    run_b: (&ParticleEnsemble, KernelWidth),
    grid: &[f64],
    exec: Execution,
) -> Result<FieldNorms> {
    let va = SortedFieldView::build(run_a.0, run_a.1)?;
    let vb = SortedFieldView::build(run_b.0, run_b.1)?;
    let pa = va.profile(grid, exec)?;
    let pb = vb.profile(grid, exec)?;
    Ok(sample_gaps(&pa, &pb))
}

/// Component-wise sup-norm gaps between two profiles on a shared grid.
pub fn sample_gaps(a: &[FieldSample], b: &[FieldSample]) -> FieldNorms {
    let mut g = FieldNorms::default();
    for (x, y) in a.iter().zip(b) {
        g.m = g.m.max((x.m - y.m).abs());
        g.lam = g.lam.max((x.lam - y.lam).abs());
        g.mu = g.mu.max((x.mu - y.mu).abs());
        g.rho = g.rho.max((x.rho - y.rho).abs());
        g.p = g.p.max((x.p - y.p).abs());
        g.j = g.j.max((x.j - y.j).abs());
    }
    g
}

/// Least-squares slope of `log(value)` against `log(param)`.
pub fn observed_order(values: &[f64], params: &[f64]) -> Result<f64> {
    if values.len() != params.len() || values.len() < 2 {
        return Err(Error::DegenerateFit(format!(
            "need at least two (value, parameter) pairs, got {} values and {} parameters",
            values.len(),
            params.len()
        )));
    }
    if let Some(v) = values.iter().find(|&&v| !(v > 0.0 && v.is_finite())) {
        return Err(Error::DegenerateFit(format!("non-positive value {v}")));
    }
    if let Some(p) = params.iter().find(|&&p| !(p > 0.0 && p.is_finite())) {
        return Err(Error::DegenerateFit(format!("non-positive parameter {p}")));
    }
    let x: Vec<f64> = params.iter().map(|p| p.ln()).collect();
    let y: Vec<f64> = values.iter().map(|v| v.ln()).collect();
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    if !(sxx > 1e-24) {
        return Err(Error::DegenerateFit("all parameters are equal".into()));
    }
    let sxy: f64 = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum();
    Ok(sxy / sxx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::SortedFieldView;

    fn ens(r: Vec<f64>, w: Vec<f64>, m: Vec<f64>) -> ParticleEnsemble {
        let l = vec![0.1; r.len()];
        ParticleEnsemble::new(r, w, l, m, 0.0).unwrap()
    }

    #[test]
    fn order_of_powers() {
        let p = [0.1, 0.05, 0.025, 0.0125];
        assert!((observed_order(&p, &p).unwrap() - 1.0).abs() < 1e-12);
        let sq: Vec<f64> = p.iter().map(|x| x * x).collect();
        assert!((observed_order(&sq, &p).unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn order_rejects_degenerate_input() {
        assert!(matches!(observed_order(&[1.0, 0.0], &[1.0, 0.5]), Err(Error::DegenerateFit(_))));
        assert!(matches!(observed_order(&[1.0, 0.5], &[0.1, 0.1]), Err(Error::DegenerateFit(_))));
        assert!(matches!(observed_order(&[1.0], &[0.1]), Err(Error::DegenerateFit(_))));
    }

    #[test]
    fn adm_of_single_resting_particle() {
        let e = ParticleEnsemble::new(vec![1.0], vec![0.0], vec![0.0], vec![0.3], 0.0).unwrap();
        let v = SortedFieldView::build(&e, KernelWidth::new(0.1).unwrap()).unwrap();
        assert_eq!(adm_mass(&v), 0.3);
    }

    #[test]
    fn particle_number_in_flat_fields() {
        let e = ens(vec![1.0, 2.0], vec![0.0, 0.0], vec![0.0, 0.0]);
        let s = vec![FieldSample::default(); 2];
        assert_eq!(particle_number(&e, &s), 0.0);
    }

    #[test]
    fn self_calibrated_monitor_passes_and_injection_fails() {
        let mut e = ens(vec![1.0, 1.2, 1.4], vec![0.1, -0.3, 0.2], vec![1e-3, 2e-3, 1e-3]);
        let v = SortedFieldView::build(&e, KernelWidth::new(0.1).unwrap()).unwrap();
        let s = v.sample_at_particles(Execution::Sequential).unwrap();
        let mon = BoundMonitor::self_calibrated(&e, &s, 0.1, 1.0).unwrap();
        assert!(check_bounds(&e, &s, &mon).is_empty());
        e.w[1] = 10.0 * mon.threshold();
        let found = check_bounds(&e, &s, &mon);
        assert_eq!(found.len(), 1);
        assert_eq!(found[0].quantity, BoundQuantity::Momentum);
        assert_eq!(found[0].index, Some(1));
    }

    #[test]
    fn infinite_and_zero_thresholds() {
        let e = ens(vec![1.0, 1.2], vec![0.1, -0.3], vec![1e-3, 2e-3]);
        let s = vec![FieldSample::default(); 2];
        let mut mon = BoundMonitor::new(1.0, 1.0, 0.1).unwrap();
        mon.d_bound = f64::INFINITY;
        assert!(check_bounds(&e, &s, &mon).is_empty());
        mon.d_bound = 0.0;
        assert!(!check_bounds(&e, &s, &mon).is_empty());
    }

    #[test]
    fn particle_norms_running_max() {
        let a0 = ens(vec![1.0, 1.2], vec![0.0, 0.0], vec![1e-3, 1e-3]);
        let mut a1 = a0.successor(a0.r.clone(), a0.w.clone(), a0.m.clone(), 0.5);
        let b0 = a0.clone();
        let mut b1 = a1.clone();
        b1.r[0] += 0.25;
        let a2 = a1.successor(a1.r.clone(), a1.w.clone(), a1.m.clone(), 1.0);
        let b2 = a2.clone();
        a1.time = 0.5;
        let ra = [a0, a1, a2];
        let rb = [b0, b1, b2];
        let at = |t| particle_error_norms(&ra, &rb, t, 0.1).unwrap();
        assert_eq!(at(0.0).r, 0.0);
        assert_eq!(at(0.5).r, 0.25);
        assert_eq!(at(1.0).r, 0.25);
        let same = particle_error_norms(&ra, &ra, 1.0, 0.1).unwrap();
        assert_eq!(same.total(), 0.0);
    }

    #[test]
    fn particle_norms_detect_mismatch() {
        let a = ens(vec![1.0, 1.2], vec![0.0, 0.0], vec![1e-3, 1e-3]);
        let b = ens(vec![1.0], vec![0.0], vec![1e-3]);
        assert!(matches!(
            particle_error_norms(&[a], &[b], 0.0, 0.1),
            Err(Error::DecompositionMismatch(_))
        ));
    }

    #[test]
    fn field_norms_vacuum_vs_tiny_particle() {
        let q = 1e-6;
        let e = ParticleEnsemble::new(vec![1.0], vec![0.0], vec![0.0], vec![q], 0.0).unwrap();
        let d = KernelWidth::new(0.1).unwrap();
        let grid = crate::fields::radial_grid(0.05, 3.0, 300);
        let g = field_error_norms((&ParticleEnsemble::empty(), d), (&e, d), &grid, Execution::Sequential).unwrap();
        assert!((g.m - q).abs() < 1e-18);
        let g = field_error_norms((&e, d), (&e, d), &grid, Execution::Sequential).unwrap();
        assert_eq!(g, FieldNorms::default());
    }

    #[test]
    fn diagnostics_csv_row_width() {
        let row = StepDiagnostics::default().csv_row(3, 0.25);
        assert_eq!(row.split(',').count(), StepDiagnostics::CSV_HEADER.split(',').count());
    }
}
