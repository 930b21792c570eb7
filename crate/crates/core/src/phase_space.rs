//! Initial data in `(r, w, L)` coordinates, cell decomposition of its support,
//! and the macro-particle ensemble built from it.
//!
//! `w` is the radial momentum and `L = |x × v|²` the squared angular momentum,
//! so that the particle energy is `E = sqrt(1 + w² + L/r²)`. The phase-space
//! volume element in these coordinates is `dx dv = 4π² dr dw dL`.

use std::f64::consts::PI;
use std::fmt;
use std::path::Path;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::quadrature::Rule;

/// `4π²`, the Jacobian of `(x, v) -> (r, w, L)` after integrating the angles.
pub const PHASE_VOLUME_FACTOR: f64 = 4.0 * PI * PI;

/// Lower bound on `meas(A_n) / ε³` required of every cell.
pub const MIN_CELL_MEASURE_FRACTION: f64 = 0.01;

#[inline]
pub fn energy(r: f64, w: f64, l: f64) -> f64 {
    (1.0 + w * w + l / (r * r)).sqrt()
}

/// A non-negative phase-space density `f(r, w, L)`.
pub trait PhaseDensity: Send + Sync {
    fn value(&self, r: f64, w: f64, l: f64) -> f64;
}

impl<F> PhaseDensity for F
where
    F: Fn(f64, f64, f64) -> f64 + Send + Sync,
{
    fn value(&self, r: f64, w: f64, l: f64) -> f64 {
        self(r, w, l)
    }
}

/// Axis-aligned box `[lo, hi]` in `(r, w, L)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SupportBox {
    pub lo: [f64; 3],
    pub hi: [f64; 3],
}

impl SupportBox {
    pub fn new(r: (f64, f64), w: (f64, f64), l: (f64, f64)) -> Result<Self> {
        let b = Self {
            lo: [r.0, w.0, l.0],
            hi: [r.1, w.1, l.1],
        };
        b.check()?;
        Ok(b)
    }

    fn check(&self) -> Result<()> {
        let ok = self.lo.iter().chain(&self.hi).all(|v| v.is_finite())
            && self.lo[0] > 0.0
            && self.lo[2] > 0.0
            && (0..3).all(|k| self.lo[k] < self.hi[k]);
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!(
                "support box needs 0 < r_min < r_max, w_min < w_max, 0 < L_min < L_max; got {:?}..{:?}",
                self.lo, self.hi
            )))
        }
    }

    pub fn side(&self, axis: usize) -> f64 {
        self.hi[axis] - self.lo[axis]
    }

    pub fn volume(&self) -> f64 {
        self.side(0) * self.side(1) * self.side(2)
    }

    pub fn r_min(&self) -> f64 {
        self.lo[0]
    }

    pub fn r_max(&self) -> f64 {
        self.hi[0]
    }

    pub fn contains(&self, p: [f64; 3]) -> bool {
        (0..3).all(|k| p[k] >= self.lo[k] && p[k] <= self.hi[k])
    }
}

/// `(1 - s²)³` on `[-1, 1]`: a C² compactly supported polynomial bump.
#[inline]
fn bump_profile(s: f64) -> f64 {
    if s.abs() >= 1.0 {
        0.0
    } else {
        let q = 1.0 - s * s;
        q * q * q
    }
}

/// Built-in C² datum: `A · φ(r̂) φ(ŵ) φ(L̂)` with each coordinate mapped
/// affinely onto `[-1, 1]` across the support box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BumpDensity {
    pub amplitude: f64,
    pub support: SupportBox,
}

impl PhaseDensity for BumpDensity {
    fn value(&self, r: f64, w: f64, l: f64) -> f64 {
        let p = [r, w, l];
        let mut v = self.amplitude;
        for k in 0..3 {
            let (a, b) = (self.support.lo[k], self.support.hi[k]);
            v *= bump_profile((2.0 * p[k] - a - b) / (b - a));
        }
        v
    }
}

/// A density sampled on a tensor grid, trilinearly interpolated and zero
/// outside the grid.
#[derive(Debug, Clone, PartialEq)]
pub struct TabulatedDensity {
    axes: [Vec<f64>; 3],
    values: Vec<f64>,
}

impl TabulatedDensity {
    pub fn new(axes: [Vec<f64>; 3], values: Vec<f64>) -> Result<Self> {
        for ax in &axes {
            if ax.len() < 2 || ax.windows(2).any(|p| p[1] <= p[0]) {
                return Err(Error::InvalidInput(
                    "table axes need at least two strictly increasing values".into(),
                ));
            }
        }
        if values.len() != axes[0].len() * axes[1].len() * axes[2].len() {
            return Err(Error::InvalidInput("table value count does not match its axes".into()));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!("non-finite table value {v}")));
        }
        Ok(Self { axes, values })
    }

    /// Parses CSV rows `r,w,L,f` covering a full tensor grid, in any order.
    /// Lines starting with `#` and a non-numeric header line are skipped.
    pub fn parse_csv(text: &str) -> Result<Self> {
        let mut rows = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            let parsed: std::result::Result<Vec<f64>, _> = fields.iter().map(|s| s.parse::<f64>()).collect();
            match parsed {
                Ok(v) if v.len() == 4 => rows.push([v[0], v[1], v[2], v[3]]),
                Ok(_) => {
                    return Err(Error::InvalidInput(format!("line {}: expected 4 columns", lineno + 1)))
                }
                Err(_) if rows.is_empty() => continue,
                Err(e) => return Err(Error::InvalidInput(format!("line {}: {e}", lineno + 1))),
            }
        }
        let axis = |k: usize| {
            let mut v: Vec<f64> = rows.iter().map(|row| row[k]).collect();
            v.sort_by(f64::total_cmp);
            v.dedup();
            v
        };
        let axes = [axis(0), axis(1), axis(2)];
        let (nw, nl) = (axes[1].len(), axes[2].len());
        if rows.len() != axes[0].len() * nw * nl {
            return Err(Error::InvalidInput("table rows do not form a complete tensor grid".into()));
        }
        let mut values = vec![f64::NAN; rows.len()];
        for row in &rows {
            let idx = |k: usize| axes[k].binary_search_by(|x| x.total_cmp(&row[k])).unwrap();
            let flat = (idx(0) * nw + idx(1)) * nl + idx(2);
            if !values[flat].is_nan() {
                return Err(Error::InvalidInput(format!("duplicate table node {:?}", &row[..3])));
            }
            values[flat] = row[3];
        }
        Self::new(axes, values)
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        Self::parse_csv(&std::fs::read_to_string(path)?)
    }

    pub fn extent(&self) -> Result<SupportBox> {
        let ends = |k: usize| (self.axes[k][0], *self.axes[k].last().unwrap());
        SupportBox::new(ends(0), ends(1), ends(2))
    }

    fn locate(axis: &[f64], x: f64) -> Option<(usize, f64)> {
        let last = axis.len() - 1;
        if x < axis[0] || x > axis[last] {
            return None;
        }
        let i = axis.partition_point(|&a| a <= x).clamp(1, last) - 1;
        Some((i, (x - axis[i]) / (axis[i + 1] - axis[i])))
    }
}

impl PhaseDensity for TabulatedDensity {
    fn value(&self, r: f64, w: f64, l: f64) -> f64 {
        let (Some((i, tr)), Some((j, tw)), Some((k, tl))) = (
            Self::locate(&self.axes[0], r),
            Self::locate(&self.axes[1], w),
            Self::locate(&self.axes[2], l),
        ) else {
            return 0.0;
        };
        let (nw, nl) = (self.axes[1].len(), self.axes[2].len());
        let at = |a: usize, b: usize, c: usize| self.values[(a * nw + b) * nl + c];
        let mut v = 0.0;
        for (da, fa) in [(0, 1.0 - tr), (1, tr)] {
            for (db, fb) in [(0, 1.0 - tw), (1, tw)] {
                for (dc, fc) in [(0, 1.0 - tl), (1, tl)] {
                    let weight = fa * fb * fc;
                    if weight != 0.0 {
                        v += weight * at(i + da, j + db, k + dc);
                    }
                }
            }
        }
        v
    }
}

/// An initial phase-space density together with its declared support box.
#[derive(Clone)]
pub struct InitialDatum {
    density: Arc<dyn PhaseDensity>,
    support: SupportBox,
    smoothness_order: u8,
}

impl fmt::Debug for InitialDatum {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("InitialDatum")
            .field("support", &self.support)
            .field("smoothness_order", &self.smoothness_order)
            .finish_non_exhaustive()
    }
}

impl InitialDatum {
    /// Wraps `density`; rejects it if it is non-zero at probe points just
    /// outside `support`.
    pub fn new(density: Arc<dyn PhaseDensity>, support: SupportBox, smoothness_order: u8) -> Result<Self> {
        support.check()?;
        if smoothness_order < 1 {
            return Err(Error::InvalidInput("initial datum must be at least C¹".into()));
        }
        let datum = Self {
            density,
            support,
            smoothness_order,
        };
        datum.probe_outside_support()?;
        Ok(datum)
    }

    pub fn bump(amplitude: f64, support: SupportBox) -> Result<Self> {
        if !(amplitude.is_finite() && amplitude >= 0.0) {
            return Err(Error::InvalidInput(format!("bump amplitude must be >= 0, got {amplitude}")));
        }
        Self::new(Arc::new(BumpDensity { amplitude, support }), support, 2)
    }

    pub fn tabulated(table: TabulatedDensity) -> Result<Self> {
        let support = table.extent()?;
        Self::new(Arc::new(table), support, 1)
    }

    fn probe_outside_support(&self) -> Result<()> {
        const PROBES: usize = 7;
        let b = &self.support;
        for axis in 0..3 {
            let pad = 1e-6 * b.side(axis).max(1e-300);
            for outside in [b.lo[axis] - pad, b.hi[axis] + pad] {
                for i in 0..PROBES {
                    for j in 0..PROBES {
                        let mut p = [0.0; 3];
                        let (u, v) = ((i as f64 + 0.5) / PROBES as f64, (j as f64 + 0.5) / PROBES as f64);
                        let others: Vec<usize> = (0..3).filter(|&k| k != axis).collect();
                        p[axis] = outside;
                        p[others[0]] = b.lo[others[0]] + u * b.side(others[0]);
                        p[others[1]] = b.lo[others[1]] + v * b.side(others[1]);
                        if axis != 0 && p[0] <= 0.0 {
                            continue;
                        }
                        let f = self.density.value(p[0], p[1], p[2]);
                        if f != 0.0 {
                            return Err(Error::InvalidInput(format!(
                                "density is {f} outside its support box at {p:?}"
                            )));
                        }
                    }
                }
            }
        }
        Ok(())
    }

    #[inline]
    pub fn value(&self, r: f64, w: f64, l: f64) -> f64 {
        self.density.value(r, w, l)
    }

    pub fn support(&self) -> &SupportBox {
        &self.support
    }

    pub fn smoothness_order(&self) -> u8 {
        self.smoothness_order
    }
}

/// Uniform tensor-grid decomposition of the support box.
#[derive(Debug, Clone, PartialEq)]
pub struct CellDecomposition {
    support: SupportBox,
    counts: [usize; 3],
    epsilon: f64,
}

/// One cell `A_n` and its representative point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cell {
    pub lo: [f64; 3],
    pub hi: [f64; 3],
}

impl Cell {
    pub fn centroid(&self) -> [f64; 3] {
        [0, 1, 2].map(|k| 0.5 * (self.lo[k] + self.hi[k]))
    }

    pub fn measure(&self) -> f64 {
        (0..3).map(|k| self.hi[k] - self.lo[k]).product()
    }

    pub fn diameter(&self) -> f64 {
        (0..3).map(|k| (self.hi[k] - self.lo[k]).powi(2)).sum::<f64>().sqrt()
    }
}

impl CellDecomposition {
    pub fn len(&self) -> usize {
        self.counts.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn counts(&self) -> [usize; 3] {
        self.counts
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn support(&self) -> &SupportBox {
        &self.support
    }

    pub fn cell(&self, n: usize) -> Cell {
        let [_, nw, nl] = self.counts;
        let idx = [n / (nw * nl), (n / nl) % nw, n % nl];
        let mut lo = [0.0; 3];
        let mut hi = [0.0; 3];
        for k in 0..3 {
            let h = self.support.side(k) / self.counts[k] as f64;
            lo[k] = self.support.lo[k] + h * idx[k] as f64;
            hi[k] = if idx[k] + 1 == self.counts[k] {
                self.support.hi[k]
            } else {
                self.support.lo[k] + h * (idx[k] + 1) as f64
            };
        }
        Cell { lo, hi }
    }

    pub fn cells(&self) -> impl Iterator<Item = Cell> + '_ {
        (0..self.len()).map(|n| self.cell(n))
    }

    /// Representative point of cell `n` (its centroid).
    pub fn point(&self, n: usize) -> [f64; 3] {
        self.cell(n).centroid()
    }
}

/// Splits the support box into a uniform grid whose per-axis spacing is at
/// most `ε/√3`, so every cell has diameter at most `ε`.
pub fn decompose(datum: &InitialDatum, epsilon: f64) -> Result<CellDecomposition> {
    decompose_box(datum.support(), epsilon)
}

pub fn decompose_box(support: &SupportBox, epsilon: f64) -> Result<CellDecomposition> {
    if !(epsilon.is_finite() && epsilon > 0.0) {
        return Err(Error::InvalidInput(format!("fineness must be positive, got {epsilon}")));
    }
    let max_spacing = epsilon / 3f64.sqrt();
    let mut counts = [0usize; 3];
    for (k, count) in counts.iter_mut().enumerate() {
        let ratio = support.side(k) / max_spacing;
        // Absorb the rounding in side*√3/ε so exact multiples are not bumped up.
        let n = (ratio * (1.0 - 1e-12)).ceil().max(1.0);
        if n > 1e9 {
            return Err(Error::InvalidInput(format!("fineness {epsilon} gives too many cells")));
        }
        *count = n as usize;
    }
    let measure: f64 = (0..3).map(|k| support.side(k) / counts[k] as f64).product();
    if measure < MIN_CELL_MEASURE_FRACTION * epsilon.powi(3) {
        return Err(Error::FinenessTooCoarse {
            epsilon,
            reason: format!(
                "cell measure {measure:.3e} is below {MIN_CELL_MEASURE_FRACTION}·ε³; the support box is thinner than the cells"
            ),
        });
    }
    Ok(CellDecomposition {
        support: *support,
        counts,
        epsilon,
    })
}

/// Macro-particles: radius, radial momentum, squared angular momentum and
/// weight, at a common coordinate time.
///
/// The angular momenta are shared between an ensemble and all states evolved
/// from it and are never modified.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleEnsemble {
    pub r: Vec<f64>,
    pub w: Vec<f64>,
    l: Arc<[f64]>,
    pub m: Vec<f64>,
    pub time: f64,
}

impl ParticleEnsemble {
    pub fn new(r: Vec<f64>, w: Vec<f64>, l: Vec<f64>, m: Vec<f64>, time: f64) -> Result<Self> {
        let n = r.len();
        if w.len() != n || l.len() != n || m.len() != n {
            return Err(Error::InvalidInput("ensemble arrays differ in length".into()));
        }
        if let Some(i) = r.iter().position(|&x| !(x > 0.0 && x.is_finite())) {
            return Err(Error::NonPositiveRadius { index: i, radius: r[i] });
        }
        if l.iter().any(|&x| !(x >= 0.0 && x.is_finite())) {
            return Err(Error::InvalidInput("angular momenta must be finite and >= 0".into()));
        }
        if m.iter().chain(&w).any(|x| !x.is_finite()) || m.iter().any(|&x| x < 0.0) {
            return Err(Error::InvalidInput("weights must be finite and >= 0, momenta finite".into()));
        }
        Ok(Self {
            r,
            w,
            l: l.into(),
            m,
            time,
        })
    }

    pub fn empty() -> Self {
        Self {
            r: Vec::new(),
            w: Vec::new(),
            l: Arc::from(Vec::new()),
            m: Vec::new(),
            time: 0.0,
        }
    }

    /// A new state with the same angular momenta.
    pub fn successor(&self, r: Vec<f64>, w: Vec<f64>, m: Vec<f64>, time: f64) -> Self {
        debug_assert!(r.len() == self.len() && w.len() == self.len() && m.len() == self.len());
        Self {
            r,
            w,
            l: Arc::clone(&self.l),
            m,
            time,
        }
    }

    pub fn len(&self) -> usize {
        self.r.len()
    }

    pub fn is_empty(&self) -> bool {
        self.r.is_empty()
    }

    pub fn l(&self) -> &[f64] {
        &self.l
    }

    #[inline]
    pub fn energy(&self, n: usize) -> f64 {
        energy(self.r[n], self.w[n], self.l[n])
    }
}

/// Weights `M_n(0) = 4π² ∫_{A_n} f` by tensor Gauss-Legendre quadrature with
/// `quad_order` points per axis; particles sit at the cell centroids.
pub fn init_weights(
    datum: &InitialDatum,
    decomp: &CellDecomposition,
    quad_order: usize,
    exec: Execution,
) -> Result<ParticleEnsemble> {
    let rule = Rule::gauss_legendre(quad_order);
    let weights = exec.try_map(decomp.len(), |n| {
        let cell = decomp.cell(n);
        let mut negative = None;
        let integral = rule.integrate_box(cell.lo, cell.hi, |r, w, l| {
            let f = datum.value(r, w, l);
            if f < 0.0 && negative.is_none() {
                negative = Some(Error::NegativeDensity { r, w, l, value: f });
            }
            f
        });
        match negative {
            Some(e) => Err(e),
            None => Ok(PHASE_VOLUME_FACTOR * integral),
        }
    })?;
    let n = decomp.len();
    let (mut r, mut w, mut l) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
    for i in 0..n {
        let p = decomp.point(i);
        r.push(p[0]);
        w.push(p[1]);
        l.push(p[2]);
    }
    ParticleEnsemble::new(r, w, l, weights, 0.0)
}

/// Continuum source terms `(ρ, p, ȷ)` of an initial datum at radius `r`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Sources {
    pub rho: f64,
    pub p: f64,
    pub j: f64,
}

/// Panels per momentum axis in [`continuum_sources_initial`].
const SOURCE_PANELS: usize = 4;

/// `(π/r²) ∬ (E, w²/E, w) f dL dw` by composite tensor Gauss-Legendre
/// quadrature over the support box.
pub fn continuum_sources_initial(datum: &InitialDatum, r: f64, quad_order: usize) -> Sources {
    let b = datum.support();
    if !(r > 0.0) || r < b.lo[0] || r > b.hi[0] {
        return Sources::default();
    }
    let rule = Rule::gauss_legendre(quad_order);
    let (hw, hl) = (b.side(1) / SOURCE_PANELS as f64, b.side(2) / SOURCE_PANELS as f64);
    let mut s = Sources::default();
    for i in 0..SOURCE_PANELS {
        for k in 0..SOURCE_PANELS {
            let lo = [b.lo[1] + hw * i as f64, b.lo[2] + hl * k as f64];
            let hi = [lo[0] + hw, lo[1] + hl];
            for (w, ww) in rule.mapped(lo[0], hi[0]) {
                for (l, wl) in rule.mapped(lo[1], hi[1]) {
                    let f = datum.value(r, w, l);
                    if f == 0.0 {
                        continue;
                    }
                    let e = energy(r, w, l);
                    let q = ww * wl * f;
                    s.rho += q * e;
                    s.p += q * w * w / e;
                    s.j += q * w;
                }
            }
        }
    }
    let scale = PI / (r * r);
    Sources {
        rho: scale * s.rho,
        p: scale * s.p,
        j: scale * s.j,
    }
}

/// Radial panels used by [`validate_initial`] and [`continuum_mass_profile`].
pub const VALIDATION_PANELS: usize = 256;

/// Cumulative `4π² ∫_{r_min}^{r} ∬ g f` at the ends of uniform radial panels,
/// for `g = 1` (particle number) and `g = E` (mass).
pub fn continuum_mass_profile(datum: &InitialDatum, panels: usize, quad_order: usize) -> Vec<(f64, f64, f64)> {
    let b = datum.support();
    let rule = Rule::gauss_legendre(quad_order);
    let h = b.side(0) / panels as f64;
    let mut out = Vec::with_capacity(panels + 1);
    let (mut number, mut mass) = (0.0, 0.0);
    out.push((b.lo[0], 0.0, 0.0));
    for i in 0..panels {
        let r0 = b.lo[0] + h * i as f64;
        let r1 = if i + 1 == panels { b.hi[0] } else { r0 + h };
        let (mut dn, mut dm) = (0.0, 0.0);
        for (r, wr) in rule.mapped(r0, r1) {
            let (mut sn, mut sm) = (0.0, 0.0);
            for (w, ww) in rule.mapped(b.lo[1], b.hi[1]) {
                for (l, wl) in rule.mapped(b.lo[2], b.hi[2]) {
                    let f = datum.value(r, w, l);
                    sn += ww * wl * f;
                    sm += ww * wl * f * energy(r, w, l);
                }
            }
            dn += wr * sn;
            dm += wr * sm;
        }
        number += PHASE_VOLUME_FACTOR * dn;
        mass += PHASE_VOLUME_FACTOR * dm;
        out.push((r1, number, mass));
    }
    out
}

/// ADM mass `4π² ∭ E f` of the datum.
pub fn continuum_adm_mass(datum: &InitialDatum, quad_order: usize) -> f64 {
    continuum_mass_profile(datum, VALIDATION_PANELS, quad_order)
        .last()
        .map_or(0.0, |p| p.2)
}

/// Smallest value of `r/2 - q(r)` over the validation grid and where it occurs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Margin {
    pub radius: f64,
    pub margin: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValidationReport {
    /// `r/2 - ∫_{|y|≤r}∫ f dv dy`.
    pub number: Margin,
    /// `r/2 - m(0, r)`, i.e. `r/2 · (1 - 2m/r)`.
    pub mass: Margin,
}

/// Checks that no trapped surface is present initially, both in terms of the
/// particle-number integral and of the mass function entering `e^{-2λ}`.
pub fn validate_initial(datum: &InitialDatum, quad_order: usize) -> Result<ValidationReport> {
    let report = initial_margins(datum, quad_order);
    for (m, condition) in [(report.number, "number-density condition"), (report.mass, "metric positivity 2m/r < 1")] {
        if !(m.margin > 0.0) {
            return Err(Error::TrappedSurfaceAtStart {
                condition,
                radius: m.radius,
                margin: m.margin,
            });
        }
    }
    Ok(report)
}

/// The margins of [`validate_initial`] without turning failures into errors.
pub fn initial_margins(datum: &InitialDatum, quad_order: usize) -> ValidationReport {
    let profile = continuum_mass_profile(datum, VALIDATION_PANELS, quad_order);
    let mut number = Margin {
        radius: f64::NAN,
        margin: f64::INFINITY,
    };
    let mut mass = number;
    for &(r, n, m) in &profile {
        if r / 2.0 - n < number.margin {
            number = Margin { radius: r, margin: r / 2.0 - n };
        }
        if r / 2.0 - m < mass.margin {
            mass = Margin { radius: r, margin: r / 2.0 - m };
        }
    }
    ValidationReport { number, mass }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_box() -> SupportBox {
        SupportBox::new((1.0, 2.0), (-0.5, 0.5), (0.5, 1.5)).unwrap()
    }

    #[test]
    fn support_box_invariants() {
        assert!(SupportBox::new((0.0, 1.0), (0.0, 1.0), (0.1, 1.0)).is_err());
        assert!(SupportBox::new((1.0, 2.0), (0.0, 1.0), (0.0, 1.0)).is_err());
        assert!(SupportBox::new((1.0, 1.0), (0.0, 1.0), (0.1, 1.0)).is_err());
        assert!((unit_box().volume() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn energy_at_rest() {
        assert_eq!(energy(1.3, 0.0, 0.0), 1.0);
        assert!(energy(1.0, 0.3, 0.2) > 1.0);
    }

    #[test]
    fn bump_is_zero_on_boundary_and_positive_inside() {
        let d = InitialDatum::bump(2.0, unit_box()).unwrap();
        assert_eq!(d.value(1.0, 0.0, 1.0), 0.0);
        assert_eq!(d.value(1.5, 0.5, 1.0), 0.0);
        assert!((d.value(1.5, 0.0, 1.0) - 2.0).abs() < 1e-15);
    }

    #[test]
    fn density_leaking_outside_box_is_rejected() {
        let f = Arc::new(|_r: f64, _w: f64, _l: f64| 1.0);
        assert!(InitialDatum::new(f, unit_box(), 1).is_err());
    }

    #[test]
    fn single_cell_decomposition() {
        let s = 0.4;
        let b = SupportBox::new((1.0, 1.0 + s), (0.0, s), (0.2, 0.2 + s)).unwrap();
        let d = decompose_box(&b, s * 3f64.sqrt()).unwrap();
        assert_eq!(d.len(), 1);
        let p = d.point(0);
        assert!((p[0] - (1.0 + s / 2.0)).abs() < 1e-15);
    }

    #[test]
    fn eight_cell_decomposition() {
        let d = decompose_box(&unit_box(), 3f64.sqrt() / 2.0).unwrap();
        assert_eq!(d.counts(), [2, 2, 2]);
        for c in d.cells() {
            assert!((c.measure() - 0.125).abs() < 1e-15);
            assert!(c.measure() >= MIN_CELL_MEASURE_FRACTION * (3f64.sqrt() / 2.0).powi(3));
        }
    }

    #[test]
    fn thin_box_is_too_coarse() {
        let b = SupportBox::new((1.0, 2.0), (0.0, 1e-4), (0.1, 0.1001)).unwrap();
        assert!(matches!(decompose_box(&b, 0.5), Err(Error::FinenessTooCoarse { .. })));
        assert!(decompose_box(&b, -1.0).is_err());
    }

    #[test]
    fn zero_density_zero_weights() {
        let d = InitialDatum::bump(0.0, unit_box()).unwrap();
        let dec = decompose(&d, 0.3).unwrap();
        let e = init_weights(&d, &dec, 4, Execution::default()).unwrap();
        assert_eq!(e.len(), dec.len());
        assert!(e.m.iter().all(|&m| m == 0.0));
    }

    #[test]
    fn negative_density_is_reported() {
        let b = unit_box();
        let f = Arc::new(move |r: f64, w: f64, l: f64| if b.contains([r, w, l]) { -1.0 } else { 0.0 });
        let d = InitialDatum::new(f, b, 1).unwrap();
        let dec = decompose(&d, 0.9).unwrap();
        assert!(matches!(
            init_weights(&d, &dec, 2, Execution::Sequential),
            Err(Error::NegativeDensity { .. })
        ));
    }

    #[test]
    fn tabulated_trilinear() {
        let axes = [vec![1.0, 2.0], vec![0.0, 1.0], vec![0.5, 1.0]];
        // f = r + w + 2L is reproduced exactly by trilinear interpolation.
        let mut values = Vec::new();
        for r in &axes[0] {
            for w in &axes[1] {
                for l in &axes[2] {
                    values.push(r + w + 2.0 * l);
                }
            }
        }
        let t = TabulatedDensity::new(axes, values).unwrap();
        assert!((t.value(1.3, 0.4, 0.7) - (1.3 + 0.4 + 1.4)).abs() < 1e-14);
        assert_eq!(t.value(0.9, 0.4, 0.7), 0.0);
        assert!(TabulatedDensity::parse_csv("r,w,L,f\n1,0,0.5,1\n").is_err());
    }

    #[test]
    fn csv_table_roundtrip() {
        let mut text = String::from("# comment\nr,w,L,f\n");
        for r in [1.0, 1.5, 2.0] {
            for w in [-0.1, 0.1] {
                for l in [0.5, 0.6] {
                    let f = if r == 1.5 { 1.0 } else { 0.0 };
                    text.push_str(&format!("{r},{w},{l},{f}\n"));
                }
            }
        }
        let t = TabulatedDensity::parse_csv(&text).unwrap();
        assert_eq!(t.extent().unwrap().lo, [1.0, -0.1, 0.5]);
        assert!((t.value(1.25, 0.0, 0.55) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn vacuum_validation_margins() {
        let d = InitialDatum::bump(0.0, unit_box()).unwrap();
        let rep = validate_initial(&d, 4).unwrap();
        assert_eq!(rep.number.margin, rep.number.radius / 2.0);
        assert_eq!(rep.mass.margin, rep.mass.radius / 2.0);
    }

    #[test]
    fn sources_vanish_outside_support() {
        let d = InitialDatum::bump(1.0, unit_box()).unwrap();
        assert_eq!(continuum_sources_initial(&d, 0.5, 6), Sources::default());
        let s = continuum_sources_initial(&d, 1.5, 6);
        assert!(s.rho > 0.0 && s.p > 0.0 && s.p <= s.rho);
        // even in w
        assert!(s.j.abs() < 1e-14 * s.rho);
    }
}
