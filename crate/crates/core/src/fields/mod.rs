//! Deposited sources and the metric reconstructed from them.
//!
//! For an ensemble `(R̄, W̄, L, M̄)` and kernel width `δ`,
//!
//! ```text
//! ρ̄(r) = 1/(4π r² δ) Σ Ē_n M̄_n χ_δ(r - R̄_n)          (p̄: W̄²/Ē, ȷ̄: W̄)
//! m̄(r) = Σ Ē_n M̄_n χ(r - R̄_n)                         (all R̄_n > δ)
//! e^{-2λ̄} = 1 - 2m̄/r
//! μ̄'  = e^{2λ̄} (m̄/r² + 4π r p̄),   λ̄' = e^{2λ̄} (-m̄/r² + 4π r ρ̄)
//! μ̄(r) = -∫_r^∞ μ̄'
//! λ̇̄  = -4π r e^{λ̄+μ̄} ȷ̄
//! ```
//!
//! Outside the outermost particle plus `δ` the metric is Schwarzschild with
//! mass `Σ Ē M̄`. Inside, `μ̄` is integrated inward with six-point Gauss rules
//! on panels delimited by the kernel kinks `R̄_n - δ, R̄_n, R̄_n + δ`, on
//! which the integrand is smooth.

mod sums;

use std::f64::consts::PI;
use std::io::Write;

use twofloat::TwoFloat;

pub(crate) use sums::KernelSums;

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::kernel::KernelWidth;
use crate::phase_space::{ParticleEnsemble, Sources};
use crate::quadrature::radial_rule;

/// Hard guard on `1 - 2m̄/r`.
pub const TRAPPED_GUARD: f64 = 1e-12;

pub(crate) const RHO: usize = 0;
pub(crate) const PRESSURE: usize = 1;
pub(crate) const CURRENT: usize = 2;

/// Sources and metric quantities at one radius.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FieldSample {
    pub rho: f64,
    pub p: f64,
    pub j: f64,
    pub m: f64,
    pub lam: f64,
    pub mu: f64,
    pub mu_prime: f64,
    pub lam_prime: f64,
    pub lam_dot: f64,
}

impl FieldSample {
    /// `e^{2λ̄}`.
    #[inline]
    pub fn e2lam(&self) -> f64 {
        (2.0 * self.lam).exp()
    }

    /// `e^{μ̄ - λ̄}`.
    #[inline]
    pub fn lapse_ratio(&self) -> f64 {
        (self.mu - self.lam).exp()
    }

    pub fn sources(&self) -> Sources {
        Sources {
            rho: self.rho,
            p: self.p,
            j: self.j,
        }
    }
}

/// Everything but `μ̄` and `λ̇̄`, which need the inward integral.
#[derive(Debug, Clone, Copy)]
struct Local {
    rho: f64,
    p: f64,
    j: f64,
    m: f64,
    lam: f64,
    mu_prime: f64,
    lam_prime: f64,
    /// `4π r ȷ̄`
    j_flux: f64,
}

/// Radius-sorted particles with prefix moments, from which all field
/// quantities are evaluated.
#[derive(Debug, Clone)]
pub struct SortedFieldView {
    order: Vec<usize>,
    sums: KernelSums,
    delta: KernelWidth,
    total_em: f64,
    kinks: Vec<f64>,
}

impl SortedFieldView {
    /// Sorts the particles by radius (stably) and accumulates the deposition
    /// moments. Every particle must sit further than `δ` from the centre.
    pub fn build(ensemble: &ParticleEnsemble, delta: KernelWidth) -> Result<Self> {
        let d = delta.get();
        if let Some(i) = ensemble.r.iter().position(|&r| !(r > d)) {
            return Err(Error::ParticleTooCentral {
                index: i,
                radius: ensemble.r[i],
                delta: d,
            });
        }
        let n = ensemble.len();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| ensemble.r[a].total_cmp(&ensemble.r[b]));
        let sorted_r: Vec<f64> = order.iter().map(|&i| ensemble.r[i]).collect();
        let mut em = Vec::with_capacity(n);
        let mut w2m = Vec::with_capacity(n);
        let mut wm = Vec::with_capacity(n);
        for &i in &order {
            let e = ensemble.energy(i);
            let (w, m) = (ensemble.w[i], ensemble.m[i]);
            em.push(e * m);
            w2m.push(w * w / e * m);
            wm.push(w * m);
        }
        let sums = KernelSums::new(sorted_r, d, &[em, w2m, wm]);
        let total_em = f64::from(sums.total(RHO));
        let kinks = merged_kinks(sums.radii(), d);
        Ok(Self {
            order,
            sums,
            delta,
            total_em,
            kinks,
        })
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn delta(&self) -> KernelWidth {
        self.delta
    }

    /// Particle indices in ascending radius order.
    pub fn order(&self) -> &[usize] {
        &self.order
    }

    pub fn sorted_r(&self) -> &[f64] {
        self.sums.radii()
    }

    /// `Σ Ē_n M̄_n`.
    pub fn total_em(&self) -> f64 {
        self.total_em
    }

    /// Outer edge of the deposited support, `max R̄ + δ` (0 when empty).
    pub fn r_out(&self) -> f64 {
        self.sums.radii().last().map_or(0.0, |&r| r + self.delta.get())
    }

    /// Inner edge of the deposited support, `min R̄ - δ` (0 when empty).
    pub fn r_in(&self) -> f64 {
        self.sums.radii().first().map_or(0.0, |&r| r - self.delta.get())
    }

    pub(crate) fn sums(&self) -> &KernelSums {
        &self.sums
    }

    /// `(ρ̄, p̄, ȷ̄)` at `r`.
    pub fn deposit(&self, r: f64) -> Sources {
        if !(r > 0.0) || self.is_empty() {
            return Sources::default();
        }
        let d = self.delta.get();
        let w = self.sums.window(r);
        let scale = 1.0 / (4.0 * PI * r * r * d);
        let h = |ch| f64::from(self.sums.moments(ch, w).hat(r, d));
        Sources {
            rho: scale * h(RHO),
            p: scale * h(PRESSURE),
            j: scale * h(CURRENT),
        }
    }

    /// `m̄(r) = 4π ∫_0^r s² ρ̄(s) ds`.
    pub fn mass_at(&self, r: f64) -> f64 {
        if !(r > 0.0) || self.is_empty() {
            return 0.0;
        }
        if r >= self.r_out() {
            return self.total_em;
        }
        f64::from(self.sums.cumulative_sum(RHO, r))
    }

    pub fn lambda_at(&self, r: f64) -> Result<f64> {
        Ok(self.local(r, None)?.lam)
    }

    pub fn mu_prime_at(&self, r: f64) -> Result<f64> {
        Ok(self.local(r, None)?.mu_prime)
    }

    pub fn lambda_prime_at(&self, r: f64) -> Result<f64> {
        Ok(self.local(r, None)?.lam_prime)
    }

    pub fn mu_at(&self, r: f64) -> Result<f64> {
        Ok(self.mu_sweep(&[r.max(0.0)], Execution::Sequential)?[0])
    }

    pub fn lambda_dot_at(&self, r: f64) -> Result<f64> {
        Ok(self.sample_at(r)?.lam_dot)
    }

    /// All field quantities at one radius.
    pub fn sample_at(&self, r: f64) -> Result<FieldSample> {
        let local = self.local(r, None)?;
        let mu = self.mu_at(r)?;
        Ok(assemble(local, mu))
    }

    /// Field quantities at every particle, in particle order. `μ̄` comes from
    /// a single inward sweep over the sorted radii.
    pub fn sample_at_particles(&self, exec: Execution) -> Result<Vec<FieldSample>> {
        let radii = self.sums.radii();
        let locals = exec.try_map(radii.len(), |i| self.local(radii[i], Some(self.order[i])))?;
        let mus = self.mu_sweep(radii, exec)?;
        let mut out = vec![FieldSample::default(); radii.len()];
        for (i, (local, mu)) in locals.into_iter().zip(mus).enumerate() {
            out[self.order[i]] = assemble(local, mu);
        }
        Ok(out)
    }

    /// Field quantities on an arbitrary radial grid (any order).
    pub fn profile(&self, grid: &[f64], exec: Execution) -> Result<Vec<FieldSample>> {
        let mut idx: Vec<usize> = (0..grid.len()).collect();
        idx.sort_by(|&a, &b| grid[a].total_cmp(&grid[b]));
        let sorted: Vec<f64> = idx.iter().map(|&i| grid[i].max(0.0)).collect();
        let locals = exec.try_map(sorted.len(), |i| self.local(sorted[i], None))?;
        let mus = self.mu_sweep(&sorted, exec)?;
        let mut out = vec![FieldSample::default(); grid.len()];
        for (k, (local, mu)) in locals.into_iter().zip(mus).enumerate() {
            out[idx[k]] = assemble(local, mu);
        }
        Ok(out)
    }

    fn local(&self, r: f64, particle: Option<usize>) -> Result<Local> {
        if !(r > 0.0) || self.is_empty() {
            return Ok(Local {
                rho: 0.0,
                p: 0.0,
                j: 0.0,
                m: 0.0,
                lam: 0.0,
                mu_prime: 0.0,
                lam_prime: 0.0,
                j_flux: 0.0,
            });
        }
        let d = self.delta.get();
        let w = self.sums.window(r);
        let h_rho = f64::from(self.sums.moments(RHO, w).hat(r, d));
        let h_p = f64::from(self.sums.moments(PRESSURE, w).hat(r, d));
        let h_j = f64::from(self.sums.moments(CURRENT, w).hat(r, d));
        let m = if r >= self.r_out() {
            self.total_em
        } else {
            f64::from(self.sums.moments(RHO, w).cumulative(r, d))
        };
        let x = 2.0 * m / r;
        let g = 1.0 - x;
        if !(g > TRAPPED_GUARD) {
            return Err(Error::TrappedSurface {
                radius: r,
                mass: m,
                particle,
            });
        }
        let e2l = 1.0 / g;
        let scale = 1.0 / (4.0 * PI * r * r * d);
        Ok(Local {
            rho: scale * h_rho,
            p: scale * h_p,
            j: scale * h_j,
            m,
            lam: -0.5 * (-x).ln_1p(),
            mu_prime: e2l * (m / (r * r) + h_p / (d * r)),
            lam_prime: e2l * (-m / (r * r) + h_rho / (d * r)),
            j_flux: h_j / (d * r),
        })
    }

    /// `μ̄` in the Schwarzschild exterior `r ≥ r_out`.
    fn mu_exterior(&self, r: f64) -> Result<f64> {
        if self.total_em == 0.0 {
            return Ok(0.0);
        }
        let x = 2.0 * self.total_em / r;
        if !(1.0 - x > TRAPPED_GUARD) {
            return Err(Error::TrappedSurface {
                radius: r,
                mass: self.total_em,
                particle: None,
            });
        }
        Ok(0.5 * (-x).ln_1p())
    }

    /// `∫_a^b μ̄'` over a panel containing no kernel kink in its interior.
    ///
    /// Inside such a panel `m̄` is an exact quadratic and the pressure hat sum
    /// an exact linear function of `r`; both are expanded once about the
    /// midpoint and evaluated in plain `f64` at the nodes.
    fn panel_integral(&self, a: f64, b: f64) -> Result<f64> {
        let d = self.delta.get();
        let s0 = 0.5 * (a + b);
        let w = self.sums.window(s0);
        let rho = self.sums.moments(RHO, w);
        let pre = self.sums.moments(PRESSURE, w);
        let m0 = f64::from(rho.cumulative(s0, d));
        let m1 = f64::from(rho.hat(s0, d)) / d;
        let m2 = 0.5 * rho.hat_slope(d) / d;
        let p0 = f64::from(pre.hat(s0, d));
        let p1 = pre.hat_slope(d);
        let mut total = 0.0;
        for (s, weight) in radial_rule().mapped(a, b) {
            let x = s - s0;
            let m = m0 + x * (m1 + x * m2);
            let hp = p0 + x * p1;
            let g = 1.0 - 2.0 * m / s;
            if !(g > TRAPPED_GUARD) {
                return Err(Error::TrappedSurface {
                    radius: s,
                    mass: m,
                    particle: None,
                });
            }
            total += weight * (m / (s * s) + hp / (d * s)) / g;
        }
        Ok(total)
    }

    /// `sup_r 2m̄(r)/r`, exact up to rounding.
    ///
    /// Between kinks `m̄ = a + b r + c r²`, so `m̄/r` is extremal only at the
    /// panel ends or at `r = √(a/c)`. Outside the kinks `m̄/r` is `0` or
    /// decreasing.
    pub fn max_compactness(&self, exec: Execution) -> f64 {
        let k = &self.kinks;
        if k.len() < 2 {
            return 0.0;
        }
        let d = self.delta.get();
        let best = exec.map(k.len() - 1, |i| {
            let (lo, hi) = (k[i], k[i + 1]);
            if !(hi > lo) || hi <= 0.0 {
                return 0.0;
            }
            let s0 = 0.5 * (lo + hi);
            let rho = self.sums.moments(RHO, self.sums.window(s0));
            let m0 = f64::from(rho.cumulative(s0, d));
            let m1 = f64::from(rho.hat(s0, d)) / d;
            let m2 = 0.5 * rho.hat_slope(d) / d;
            let ratio = |s: f64| {
                let x = s - s0;
                (m0 + x * (m1 + x * m2)) / s
            };
            let lo = lo.max(f64::MIN_POSITIVE);
            let mut g = ratio(lo).max(ratio(hi));
            let a = m0 - s0 * (m1 - s0 * m2);
            if m2 != 0.0 && a / m2 > 0.0 {
                let s = (a / m2).sqrt();
                if s > lo && s < hi {
                    g = g.max(ratio(s));
                }
            }
            g
        });
        2.0 * best.into_iter().fold(0.0, f64::max)
    }

    /// `μ̄` at each of the ascending radii `queries`, by one inward sweep over
    /// panels bounded by the kernel kinks and the queries themselves.
    fn mu_sweep(&self, queries: &[f64], exec: Execution) -> Result<Vec<f64>> {
        debug_assert!(queries.windows(2).all(|p| p[0] <= p[1]));
        let r_out = self.r_out();
        let mut out = vec![0.0; queries.len()];
        let n_inside = queries.partition_point(|&q| q < r_out);
        for (o, &q) in out.iter_mut().zip(queries).skip(n_inside) {
            *o = self.mu_exterior(q)?;
        }
        if n_inside == 0 {
            return Ok(out);
        }
        // Breakpoints from the innermost query up to r_out.
        let lowest = queries[0];
        let first_kink = self.kinks.partition_point(|&k| k < lowest);
        let mut points = Vec::with_capacity(self.kinks.len() - first_kink + n_inside + 1);
        let (mut i, mut j) = (first_kink, 0);
        let kinks = &self.kinks;
        while i < kinks.len() || j < n_inside {
            let take_kink = j >= n_inside || (i < kinks.len() && kinks[i] <= queries[j]);
            let p = if take_kink {
                i += 1;
                kinks[i - 1]
            } else {
                j += 1;
                queries[j - 1]
            };
            if p < r_out && points.last() != Some(&p) {
                points.push(p);
            }
        }
        points.push(r_out);

        let integrals = exec.try_map(points.len() - 1, |k| self.panel_integral(points[k], points[k + 1]))?;

        let mut acc = TwoFloat::from(self.mu_exterior(r_out)?);
        let mut mu_at_points = vec![0.0; points.len()];
        *mu_at_points.last_mut().unwrap() = f64::from(acc);
        for k in (0..points.len() - 1).rev() {
            acc -= integrals[k];
            mu_at_points[k] = f64::from(acc);
        }
        for (o, &q) in out.iter_mut().zip(queries).take(n_inside) {
            let k = points.partition_point(|&p| p < q);
            *o = mu_at_points[k];
        }
        Ok(out)
    }

    /// Writes the field profile on `grid` as CSV.
    pub fn write_profile_csv<W: Write>(&self, grid: &[f64], exec: Execution, mut out: W) -> Result<()> {
        let samples = self.profile(grid, exec)?;
        writeln!(out, "r,rho,p,j,m,lam,mu,mu',lam',lam_dot")?;
        for (r, s) in grid.iter().zip(&samples) {
            writeln!(
                out,
                "{r:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e}",
                s.rho, s.p, s.j, s.m, s.lam, s.mu, s.mu_prime, s.lam_prime, s.lam_dot
            )?;
        }
        Ok(())
    }
}

fn assemble(l: Local, mu: f64) -> FieldSample {
    FieldSample {
        rho: l.rho,
        p: l.p,
        j: l.j,
        m: l.m,
        lam: l.lam,
        mu,
        mu_prime: l.mu_prime,
        lam_prime: l.lam_prime,
        lam_dot: -(l.lam + mu).exp() * l.j_flux,
    }
}

/// The sorted union of `R - δ`, `R` and `R + δ` over sorted radii.
fn merged_kinks(sorted: &[f64], delta: f64) -> Vec<f64> {
    let n = sorted.len();
    let mut out = Vec::with_capacity(3 * n);
    let (mut a, mut b, mut c) = (0, 0, 0);
    while a < n || b < n || c < n {
        let va = if a < n { sorted[a] - delta } else { f64::INFINITY };
        let vb = if b < n { sorted[b] } else { f64::INFINITY };
        let vc = if c < n { sorted[c] + delta } else { f64::INFINITY };
        if va <= vb && va <= vc {
            out.push(va);
            a += 1;
        } else if vb <= vc {
            out.push(vb);
            b += 1;
        } else {
            out.push(vc);
            c += 1;
        }
    }
    out
}

/// Uniform radial grid of `n` points on `[a, b]`.
pub fn radial_grid(a: f64, b: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![a],
        _ => (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect(),
    }
}
