//! Time evolution of the particle ensemble.
//!
//! The semi-discrete system, for each particle `n`,
//!
//! ```text
//! Ṙ = e^{μ̄-λ̄} W/E
//! Ẇ = e^{μ̄-λ̄} L/(R³E) - λ̇̄ W - e^{μ̄-λ̄} μ̄' E
//! Ṁ = -(λ̇̄ + e^{μ̄-λ̄} (W/E) λ̄') M
//! ```
//!
//! with all fields evaluated at `R`, is integrated either by RK4
//! ([`rk4_step`]) or by the two-phase Euler-type scheme ([`euler_full_step`]).
//! The latter rewrites the source contributions to `Ẇ` and `Ṁ` using
//! `d/dt χ(R_n - R_m) = χ_δ(R_n - R_m)(Ṙ_n - Ṙ_m)/δ` and replaces that time
//! derivative by a difference quotient over the step, which is why all radii
//! are advanced before any momentum or weight.

use twofloat::TwoFloat;

use crate::diagnostics::{self, observed_order, BoundMonitor, StepDiagnostics, Violation};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::fields::{FieldSample, KernelSums, SortedFieldView, CURRENT, PRESSURE, RHO, TRAPPED_GUARD};
use crate::kernel::KernelWidth;
use crate::phase_space::ParticleEnsemble;

/// Where the metric seen by the particles comes from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FieldModel {
    /// Fields deposited from the ensemble itself.
    SelfConsistent(KernelWidth),
    /// A fixed Schwarzschild exterior of the given mass; the particles are
    /// test particles. Used to check the integrators against geodesics.
    FrozenSchwarzschild { mass: f64 },
}

impl FieldModel {
    /// Field values at every particle, in particle order.
    pub fn sample(&self, ensemble: &ParticleEnsemble, exec: Execution) -> Result<Vec<FieldSample>> {
        match *self {
            FieldModel::SelfConsistent(delta) => {
                let view = build_view(ensemble, delta)?;
                view.sample_at_particles(exec)
            }
            FieldModel::FrozenSchwarzschild { mass } => ensemble
                .r
                .iter()
                .enumerate()
                .map(|(n, &r)| schwarzschild_sample(mass, r, n))
                .collect(),
        }
    }

    fn min_radius(&self) -> f64 {
        match *self {
            FieldModel::SelfConsistent(delta) => delta.get(),
            FieldModel::FrozenSchwarzschild { mass } => 2.0 * mass,
        }
    }
}

fn schwarzschild_sample(mass: f64, r: f64, n: usize) -> Result<FieldSample> {
    let x = 2.0 * mass / r;
    if !(1.0 - x > TRAPPED_GUARD) {
        return Err(Error::TrappedSurface {
            radius: r,
            mass,
            particle: Some(n),
        });
    }
    let lam = -0.5 * (-x).ln_1p();
    let e2l = 1.0 / (1.0 - x);
    Ok(FieldSample {
        rho: 0.0,
        p: 0.0,
        j: 0.0,
        m: mass,
        lam,
        mu: -lam,
        mu_prime: e2l * mass / (r * r),
        lam_prime: -e2l * mass / (r * r),
        lam_dot: 0.0,
    })
}

/// Builds a view, reporting particles inside `δ` as inadmissible radii.
pub(crate) fn build_view(ensemble: &ParticleEnsemble, delta: KernelWidth) -> Result<SortedFieldView> {
    SortedFieldView::build(ensemble, delta).map_err(|e| match e {
        Error::ParticleTooCentral { index, radius, .. } => Error::NonPositiveRadius { index, radius },
        other => other,
    })
}

/// Time derivatives of `(R, W, M)`; `L` is constant.
#[derive(Debug, Clone, PartialEq)]
pub struct DerivativeSet {
    pub dr: Vec<f64>,
    pub dw: Vec<f64>,
    pub dm: Vec<f64>,
}

/// Right-hand side of the semi-discrete system from precomputed field samples.
pub fn derivatives(ensemble: &ParticleEnsemble, samples: &[FieldSample]) -> DerivativeSet {
    let n = ensemble.len();
    let (mut dr, mut dw, mut dm) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
    let l = ensemble.l();
    for (i, s) in samples.iter().enumerate() {
        let (r, w, m) = (ensemble.r[i], ensemble.w[i], ensemble.m[i]);
        let e = ensemble.energy(i);
        let a = s.lapse_ratio();
        let speed = a * w / e;
        dr.push(speed);
        dw.push(a * l[i] / (r * r * r * e) - s.lam_dot * w - a * s.mu_prime * e);
        dm.push(-(s.lam_dot + speed * s.lam_prime) * m);
    }
    DerivativeSet { dr, dw, dm }
}

pub fn semi_rhs(ensemble: &ParticleEnsemble, model: &FieldModel, exec: Execution) -> Result<DerivativeSet> {
    let samples = model.sample(ensemble, exec)?;
    Ok(derivatives(ensemble, &samples))
}

fn check_radii(r: &[f64], min_radius: f64) -> Result<()> {
    match r.iter().position(|&x| !(x > min_radius)) {
        Some(index) => Err(Error::NonPositiveRadius { index, radius: r[index] }),
        None => Ok(()),
    }
}

fn axpy_state(base: &ParticleEnsemble, k: &DerivativeSet, h: f64, time: f64) -> ParticleEnsemble {
    let r = base.r.iter().zip(&k.dr).map(|(x, d)| x + h * d).collect();
    let w = base.w.iter().zip(&k.dw).map(|(x, d)| x + h * d).collect();
    let m = base.m.iter().zip(&k.dm).map(|(x, d)| x + h * d).collect();
    base.successor(r, w, m, time)
}

/// Classical four-stage Runge-Kutta step; the fields are rebuilt at every
/// stage.
pub fn rk4_step(ensemble: &ParticleEnsemble, model: &FieldModel, dt: f64, exec: Execution) -> Result<ParticleEnsemble> {
    let samples = model.sample(ensemble, exec)?;
    rk4_step_from(ensemble, &samples, model, dt, exec)
}

/// [`rk4_step`] with the first-stage samples already computed.
pub fn rk4_step_from(
    ensemble: &ParticleEnsemble,
    samples: &[FieldSample],
    model: &FieldModel,
    dt: f64,
    exec: Execution,
) -> Result<ParticleEnsemble> {
    if !(dt > 0.0) {
        return Err(Error::InvalidInput(format!("time step must be positive, got {dt}")));
    }
    let t0 = ensemble.time;
    let floor = model.min_radius();
    let k1 = derivatives(ensemble, samples);
    let s2 = axpy_state(ensemble, &k1, 0.5 * dt, t0 + 0.5 * dt);
    check_radii(&s2.r, floor)?;
    let k2 = semi_rhs(&s2, model, exec)?;
    let s3 = axpy_state(ensemble, &k2, 0.5 * dt, t0 + 0.5 * dt);
    check_radii(&s3.r, floor)?;
    let k3 = semi_rhs(&s3, model, exec)?;
    let s4 = axpy_state(ensemble, &k3, dt, t0 + dt);
    check_radii(&s4.r, floor)?;
    let k4 = semi_rhs(&s4, model, exec)?;
    let combine = |x: &[f64], a: &[f64], b: &[f64], c: &[f64], d: &[f64]| -> Vec<f64> {
        (0..x.len())
            .map(|i| x[i] + dt / 6.0 * (a[i] + 2.0 * b[i] + 2.0 * c[i] + d[i]))
            .collect()
    };
    let r = combine(&ensemble.r, &k1.dr, &k2.dr, &k3.dr, &k4.dr);
    let w = combine(&ensemble.w, &k1.dw, &k2.dw, &k3.dw, &k4.dw);
    let m = combine(&ensemble.m, &k1.dm, &k2.dm, &k3.dm, &k4.dm);
    check_radii(&r, floor)?;
    Ok(ensemble.successor(r, w, m, t0 + dt))
}

/// Which version of the two-phase update to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FormulaVariant {
    /// Regrouping consistent with the semi-discrete system: a single
    /// `e^{2λ̄}/R̄` prefactor on the difference-quotient terms and a minus sign
    /// on the weight term.
    #[default]
    Corrected,
    /// The update as typeset in the source derivation: the prefactor applied
    /// twice and a plus sign on the weight term. Kept for comparison only.
    PaperLiteral,
}

/// Result of one two-phase step.
#[derive(Debug, Clone)]
pub struct EulerStep {
    pub next: ParticleEnsemble,
    /// Largest step for which every weight bracket stays non-negative, to
    /// first order in the step.
    pub tau_max: f64,
}

/// One step of the two-phase Euler-type scheme.
pub fn euler_full_step(
    ensemble: &ParticleEnsemble,
    delta: KernelWidth,
    tau: f64,
    variant: FormulaVariant,
    exec: Execution,
) -> Result<EulerStep> {
    let view = build_view(ensemble, delta)?;
    let samples = view.sample_at_particles(exec)?;
    euler_step_from(ensemble, &view, &samples, tau, variant, exec)
}

/// [`euler_full_step`] from a prebuilt view and its particle samples.
pub fn euler_step_from(
    ensemble: &ParticleEnsemble,
    view: &SortedFieldView,
    samples: &[FieldSample],
    tau: f64,
    variant: FormulaVariant,
    exec: Execution,
) -> Result<EulerStep> {
    if !(tau > 0.0) {
        return Err(Error::InvalidInput(format!("time step must be positive, got {tau}")));
    }
    let n = ensemble.len();
    let delta = view.delta().get();
    let l = ensemble.l();
    let energy: Vec<f64> = (0..n).map(|i| ensemble.energy(i)).collect();
    let lapse: Vec<f64> = samples.iter().map(FieldSample::lapse_ratio).collect();

    // Phase 1: all radii.
    let r_next: Vec<f64> = (0..n)
        .map(|i| ensemble.r[i] + tau * lapse[i] * ensemble.w[i] / energy[i])
        .collect();
    check_radii(&r_next, delta)?;

    // Cumulative sums at the new radii, carrying the old weights.
    let mut order_next: Vec<usize> = (0..n).collect();
    order_next.sort_by(|&a, &b| r_next[a].total_cmp(&r_next[b]));
    let sorted_next: Vec<f64> = order_next.iter().map(|&i| r_next[i]).collect();
    let wm_next: Vec<f64> = order_next.iter().map(|&i| ensemble.w[i] * ensemble.m[i]).collect();
    let em_next: Vec<f64> = order_next.iter().map(|&i| energy[i] * ensemble.m[i]).collect();
    let after = KernelSums::new(sorted_next, delta, &[wm_next, em_next]);

    // Hat sums weighted by e^{μ̄-λ̄} at the source particle, old radii.
    let order = view.order();
    let pa: Vec<f64> = order
        .iter()
        .map(|&i| ensemble.w[i] * ensemble.w[i] / energy[i] * ensemble.m[i] * lapse[i])
        .collect();
    let ja: Vec<f64> = order.iter().map(|&i| ensemble.w[i] * ensemble.m[i] * lapse[i]).collect();
    let weighted = KernelSums::new(view.sorted_r().to_vec(), delta, &[pa, ja]);
    let before = view.sums();

    // Phase 2: momenta and weights, from frozen phase-0/phase-1 data only.
    let updates = exec.map(n, |i| {
        let (r, w) = (ensemble.r[i], ensemble.w[i]);
        let (e, a, s) = (energy[i], lapse[i], &samples[i]);
        let r1 = r_next[i];
        let prefactor = s.e2lam() / r;
        let outer = (s.mu + s.lam).exp();

        let dchi_w = f64::from(after.cumulative_sum(0, r1) - before.cumulative_sum(CURRENT, r));
        let dchi_e = f64::from(after.cumulative_sum(1, r1) - before.cumulative_sum(RHO, r));
        let h_p = before.hat_sum(PRESSURE, r);
        let h_j = before.hat_sum(CURRENT, r);
        let h_pa = weighted.hat_sum(0, r);
        let h_ja = weighted.hat_sum(1, r);

        let fw1 = a * l[i] / (r * r * r * e) - outer * s.m / (r * r) * e;
        let fw3 = prefactor / delta * e * f64::from(h_pa - TwoFloat::from(a) * h_p);
        let fm1 = outer * s.m / (r * r) * (w / e);
        let fm3 = prefactor / delta * f64::from(TwoFloat::from(a) * h_j - h_ja);

        let (w_next, bracket) = match variant {
            FormulaVariant::Corrected => (
                w + tau * fw1 + prefactor * e * dchi_w + tau * fw3,
                1.0 + tau * fm1 - prefactor * dchi_e + tau * fm3,
            ),
            FormulaVariant::PaperLiteral => (
                w + tau * fw1 + prefactor * prefactor * e * dchi_w + tau * fw3,
                1.0 + tau * fm1 + prefactor * prefactor * dchi_e + tau * fm3,
            ),
        };
        (w_next, bracket)
    });

    let mut w_next = Vec::with_capacity(n);
    let mut m_next = Vec::with_capacity(n);
    let mut tau_max = f64::INFINITY;
    let mut worst: Option<(usize, f64)> = None;
    for (i, (w1, bracket)) in updates.into_iter().enumerate() {
        let rate = (bracket - 1.0) / tau;
        if rate < 0.0 {
            tau_max = tau_max.min(-1.0 / rate);
        }
        if bracket < 0.0 && ensemble.m[i] > 0.0 && worst.is_none() {
            worst = Some((i, bracket));
        }
        w_next.push(w1);
        m_next.push(ensemble.m[i] * bracket);
    }
    if let Some((index, bracket)) = worst {
        return Err(Error::StepTooLarge { index, bracket, tau_max });
    }
    Ok(EulerStep {
        next: ensemble.successor(r_next, w_next, m_next, ensemble.time + tau),
        tau_max,
    })
}

/// One row of a [`consistency_check`] table.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DefectRow {
    pub tau: f64,
    /// `max_n |ΔR/τ - Ṙ|`
    pub r: f64,
    /// `max_n |ΔW/τ - Ẇ|`
    pub w: f64,
    /// `max_n |ΔM/τ - Ṁ| / max_n M`
    pub m: f64,
}

impl DefectRow {
    pub fn total(&self) -> f64 {
        self.r + self.w + self.m
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConsistencyTable {
    pub rows: Vec<DefectRow>,
    /// Observed order of the total defect; `None` when every defect is zero
    /// to rounding.
    pub order: Option<f64>,
}

/// Below this the defect is rounding noise.
const DEFECT_FLOOR: f64 = 1e-12;

/// Compares one two-phase step, as a difference quotient, with the
/// semi-discrete right-hand side at the same state, for each `τ`.
pub fn consistency_check(
    ensemble: &ParticleEnsemble,
    delta: KernelWidth,
    taus: &[f64],
    variant: FormulaVariant,
    exec: Execution,
) -> Result<ConsistencyTable> {
    if taus.iter().any(|&t| !(t > 0.0)) || taus.windows(2).any(|p| p[1] >= p[0]) {
        return Err(Error::InvalidInput("step sizes must be positive and decreasing".into()));
    }
    let view = build_view(ensemble, delta)?;
    let samples = view.sample_at_particles(exec)?;
    let rhs = derivatives(ensemble, &samples);
    let m_scale = ensemble.m.iter().fold(0.0f64, |a, &b| a.max(b));
    let mut rows = Vec::with_capacity(taus.len());
    for &tau in taus {
        let next = euler_step_from(ensemble, &view, &samples, tau, variant, exec)?.next;
        let defect = |new: &[f64], old: &[f64], d: &[f64]| {
            (0..old.len()).fold(0.0f64, |acc, i| acc.max(((new[i] - old[i]) / tau - d[i]).abs()))
        };
        let dm = defect(&next.m, &ensemble.m, &rhs.dm);
        rows.push(DefectRow {
            tau,
            r: defect(&next.r, &ensemble.r, &rhs.dr),
            w: defect(&next.w, &ensemble.w, &rhs.dw),
            m: if m_scale > 0.0 { dm / m_scale } else { dm },
        });
    }
    let order = if rows.iter().all(|row| row.total() < DEFECT_FLOOR) {
        None
    } else {
        let values: Vec<f64> = rows.iter().map(DefectRow::total).collect();
        Some(observed_order(&values, taus)?)
    };
    Ok(ConsistencyTable { rows, order })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Scheme {
    SemiRk4,
    #[default]
    FullEuler,
}

/// Run-time checks applied at every step of [`evolve`].
#[derive(Debug, Clone, PartialEq)]
pub struct Monitors {
    pub bounds: Option<BoundMonitor>,
    /// Abort on a bound violation; otherwise violations are only recorded.
    pub abort_on_violation: bool,
    /// Stop with [`Termination::Collapse`] once `max 2m̄/r` reaches this.
    pub collapse_threshold: Option<f64>,
    /// Flag steps where `1 - 2m̄/r` drops below this.
    pub near_collapse_margin: f64,
    /// Outer radius of the region whose peak density is tracked.
    pub central_radius: f64,
}

impl Default for Monitors {
    fn default() -> Self {
        Self {
            bounds: None,
            abort_on_violation: true,
            collapse_threshold: None,
            near_collapse_margin: 0.05,
            central_radius: f64::INFINITY,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvolveOptions {
    pub scheme: Scheme,
    /// `dt` for RK4, `τ` for the two-phase scheme.
    pub step: f64,
    pub t_end: f64,
    pub variant: FormulaVariant,
    /// Keep diagnostics every this many steps (the first and last state are
    /// always kept).
    pub record_stride: usize,
    /// Attach an ensemble snapshot to records at multiples of this stride.
    pub snapshot_stride: Option<usize>,
    pub monitors: Monitors,
    pub exec: Execution,
}

impl EvolveOptions {
    pub fn new(scheme: Scheme, step: f64, t_end: f64) -> Self {
        Self {
            scheme,
            step,
            t_end,
            variant: FormulaVariant::Corrected,
            record_stride: 1,
            snapshot_stride: None,
            monitors: Monitors::default(),
            exec: Execution::default(),
        }
    }

    /// Number of steps needed to reach `t_end`.
    pub fn step_count(&self) -> usize {
        if self.t_end <= 0.0 {
            return 0;
        }
        let q = self.t_end / self.step;
        if (q - q.round()).abs() <= 1e-9 * q.max(1.0) {
            q.round() as usize
        } else {
            q.ceil() as usize
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub index: usize,
    pub time: f64,
    pub snapshot: Option<ParticleEnsemble>,
    pub diagnostics: StepDiagnostics,
}

#[derive(Debug)]
pub enum Termination {
    Completed,
    MonitorAbort(Violation),
    /// The collapse threshold on `2m̄/r` was reached.
    Collapse { time: f64, compactness: f64 },
    Failed(Error),
}

#[derive(Debug)]
pub struct Evolution {
    pub records: Vec<StepRecord>,
    pub last: ParticleEnsemble,
    pub termination: Termination,
    /// Every bound violation seen, in time order.
    pub violations: Vec<Violation>,
}

impl Evolution {
    pub fn into_result(self) -> Result<Self> {
        match self.termination {
            Termination::MonitorAbort(v) => Err(Error::MonitorAbort(v)),
            Termination::Failed(e) => Err(e),
            _ => Ok(self),
        }
    }

    pub fn snapshots(&self) -> impl Iterator<Item = &ParticleEnsemble> {
        self.records.iter().filter_map(|r| r.snapshot.as_ref())
    }
}

/// Advances `initial` to `t_end` (or until a monitor stops the run).
pub fn evolve(initial: &ParticleEnsemble, delta: KernelWidth, opts: &EvolveOptions) -> Evolution {
    evolve_with(initial, &FieldModel::SelfConsistent(delta), opts)
}

/// [`evolve`] with an explicit field model; the two-phase scheme requires
/// self-consistent fields.
pub fn evolve_with(initial: &ParticleEnsemble, model: &FieldModel, opts: &EvolveOptions) -> Evolution {
    let mut records = Vec::new();
    let mut violations = Vec::new();
    let mut state = initial.clone();
    let t0 = initial.time;
    let steps = opts.step_count();
    let stride = opts.record_stride.max(1);

    let finish = |records, last, termination, violations| Evolution {
        records,
        last,
        termination,
        violations,
    };
    if !(opts.step > 0.0) {
        let e = Error::InvalidInput(format!("time step must be positive, got {}", opts.step));
        return finish(records, state, Termination::Failed(e), violations);
    }
    if opts.scheme == Scheme::FullEuler && !matches!(model, FieldModel::SelfConsistent(_)) {
        let e = Error::InvalidInput("the two-phase scheme needs self-consistent fields".into());
        return finish(records, state, Termination::Failed(e), violations);
    }

    for i in 0..=steps {
        let observed = match model {
            FieldModel::SelfConsistent(delta) => build_view(&state, *delta)
                .and_then(|view| view.sample_at_particles(opts.exec).map(|s| (Some(view), s))),
            _ => model.sample(&state, opts.exec).map(|s| (None, s)),
        };
        let (view, samples) = match observed {
            Ok(v) => v,
            Err(e) => return finish(records, state, Termination::Failed(e), violations),
        };
        let diag = diagnostics::observe(&state, view.as_ref(), &samples, &opts.monitors, opts.exec);

        let mut stop = None;
        if let Some(monitor) = &opts.monitors.bounds {
            let found = diagnostics::check_bounds(&state, &samples, monitor);
            if let (true, Some(first)) = (opts.monitors.abort_on_violation, found.first()) {
                stop = Some(Termination::MonitorAbort(first.clone()));
            }
            violations.extend(found);
        }
        if stop.is_none() {
            if let Some(threshold) = opts.monitors.collapse_threshold {
                if diag.max_compactness >= threshold {
                    stop = Some(Termination::Collapse {
                        time: state.time,
                        compactness: diag.max_compactness,
                    });
                }
            }
        }
        let last = i == steps || stop.is_some();
        let snapshot_due = opts.snapshot_stride.is_some_and(|k| k > 0 && i % k == 0);
        if i % stride == 0 || last || snapshot_due {
            let snapshot = snapshot_due.then(|| state.clone());
            records.push(StepRecord {
                index: i,
                time: state.time,
                snapshot,
                diagnostics: diag,
            });
        }
        if let Some(t) = stop {
            return finish(records, state, t, violations);
        }
        if i == steps {
            break;
        }

        let time_next = t0 + (i + 1) as f64 * opts.step;
        let next = match (opts.scheme, &view) {
            (Scheme::SemiRk4, _) => rk4_step_from(&state, &samples, model, opts.step, opts.exec),
            (Scheme::FullEuler, Some(view)) => {
                euler_step_from(&state, view, &samples, opts.step, opts.variant, opts.exec).map(|s| s.next)
            }
            (Scheme::FullEuler, None) => unreachable!("checked above"),
        };
        match next {
            Ok(mut next) => {
                next.time = time_next;
                state = next;
            }
            Err(e) => return finish(records, state, Termination::Failed(e), violations),
        }
    }
    finish(records, state, Termination::Completed, violations)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tracer(r: f64, w: f64, l: f64) -> ParticleEnsemble {
        ParticleEnsemble::new(vec![r], vec![w], vec![l], vec![0.0], 0.0).unwrap()
    }

    fn cluster() -> ParticleEnsemble {
        ParticleEnsemble::new(
            vec![1.0, 1.05, 1.12, 1.2, 1.26, 1.33],
            vec![0.1, -0.2, 0.05, 0.15, -0.1, 0.2],
            vec![0.2, 0.25, 0.22, 0.3, 0.21, 0.27],
            vec![2e-3, 3e-3, 2.5e-3, 1e-3, 2e-3, 1.5e-3],
            0.0,
        )
        .unwrap()
    }

    #[test]
    fn vacuum_tracer_feels_centrifugal_barrier() {
        let e = tracer(1.5, 0.0, 0.3);
        let d = semi_rhs(&e, &FieldModel::SelfConsistent(KernelWidth::new(0.1).unwrap()), Execution::Sequential)
            .unwrap();
        let en = e.energy(0);
        assert_eq!(d.dr[0], 0.0);
        assert!((d.dw[0] - 0.3 / (1.5f64.powi(3) * en)).abs() < 1e-15);
        assert_eq!(d.dm[0], 0.0);
    }

    #[test]
    fn weight_rate_matches_pointwise_fields() {
        let e = cluster();
        let delta = KernelWidth::new(0.1).unwrap();
        let d = semi_rhs(&e, &FieldModel::SelfConsistent(delta), Execution::default()).unwrap();
        let view = SortedFieldView::build(&e, delta).unwrap();
        for n in 0..e.len() {
            let s = view.sample_at(e.r[n]).unwrap();
            let rate = -(s.lam_dot + d.dr[n] * s.lam_prime);
            assert!((d.dm[n] / e.m[n] - rate).abs() <= 1e-12 * (1.0 + rate.abs()));
        }
    }

    #[test]
    fn subluminal_radial_speed() {
        let e = cluster();
        let d = semi_rhs(&e, &FieldModel::SelfConsistent(KernelWidth::new(0.1).unwrap()), Execution::default())
            .unwrap();
        assert!(d.dr.iter().all(|v| v.abs() <= 1.0));
    }

    #[test]
    fn euler_in_vacuum_is_flat_geodesic_euler() {
        let e = ParticleEnsemble::new(vec![1.0, 1.3], vec![0.2, -0.1], vec![0.3, 0.2], vec![0.0, 0.0], 0.0).unwrap();
        let tau = 0.01;
        let step = euler_full_step(&e, KernelWidth::new(0.1).unwrap(), tau, FormulaVariant::Corrected, Execution::Sequential)
            .unwrap();
        for n in 0..2 {
            let en = e.energy(n);
            assert!((step.next.r[n] - (e.r[n] + tau * e.w[n] / en)).abs() < 1e-15);
            let dw = tau * e.l()[n] / (e.r[n].powi(3) * en);
            assert!((step.next.w[n] - (e.w[n] + dw)).abs() < 1e-15);
        }
        assert_eq!(e.l().as_ptr(), step.next.l().as_ptr());
    }

    #[test]
    fn single_particle_consistency_has_no_interaction_term() {
        let e = ParticleEnsemble::new(vec![1.2], vec![0.3], vec![0.2], vec![1e-3], 0.0).unwrap();
        let t = consistency_check(
            &e,
            KernelWidth::new(0.1).unwrap(),
            &[1e-2, 5e-3, 2.5e-3],
            FormulaVariant::Corrected,
            Execution::Sequential,
        )
        .unwrap();
        // the difference quotient reproduces the right-hand side exactly
        assert!(t.rows.iter().all(|r| r.total() < 1e-11), "{:?}", t.rows);
        assert_eq!(t.order, None);
    }

    #[test]
    fn consistency_rejects_bad_ladder() {
        let e = cluster();
        let d = KernelWidth::new(0.1).unwrap();
        assert!(consistency_check(&e, d, &[1e-3, 1e-2], FormulaVariant::Corrected, Execution::Sequential).is_err());
    }

    #[test]
    fn rk4_rejects_nonpositive_step() {
        let e = cluster();
        let m = FieldModel::SelfConsistent(KernelWidth::new(0.1).unwrap());
        assert!(rk4_step(&e, &m, 0.0, Execution::Sequential).is_err());
    }

    #[test]
    fn evolve_zero_time_single_record() {
        let e = cluster();
        let mut o = EvolveOptions::new(Scheme::FullEuler, 0.01, 0.0);
        o.snapshot_stride = Some(1);
        let ev = evolve(&e, KernelWidth::new(0.1).unwrap(), &o).into_result().unwrap();
        assert_eq!(ev.records.len(), 1);
        assert_eq!(ev.records[0].time, 0.0);
        assert_eq!(ev.last, e);
    }

    #[test]
    fn step_count_rounding() {
        let o = EvolveOptions::new(Scheme::SemiRk4, 0.1, 1.0);
        assert_eq!(o.step_count(), 10);
        let o = EvolveOptions::new(Scheme::SemiRk4, 0.3, 1.0);
        assert_eq!(o.step_count(), 4);
    }
}
