//! Independent reference implementations used by the integration tests.
#![allow(dead_code)]

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vepic::ParticleEnsemble;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn hat(z: f64, d: f64) -> f64 {
    (1.0 - z.abs() / d).max(0.0)
}

/// `∫_{-∞}^z hat / d` by explicit area of the clipped triangle.
pub fn cumulative(z: f64, d: f64) -> f64 {
    let z = z.clamp(-d, d);
    let left = |x: f64| (x + d) * hat(x, d) / 2.0;
    if z <= 0.0 {
        left(z) / d
    } else {
        1.0 - left(-z) / d
    }
}

pub fn energy(r: f64, w: f64, l: f64) -> f64 {
    (1.0 + w * w + l / (r * r)).sqrt()
}

/// Neumaier-compensated sum that also tracks `Σ|x|`.
#[derive(Default, Clone, Copy)]
pub struct Sum {
    s: f64,
    c: f64,
    abs: f64,
}

impl Sum {
    pub fn add(&mut self, x: f64) {
        let t = self.s + x;
        if self.s.abs() >= x.abs() {
            self.c += (self.s - t) + x;
        } else {
            self.c += (x - t) + self.s;
        }
        self.s = t;
        self.abs += x.abs();
    }

    pub fn value(&self) -> f64 {
        self.s + self.c
    }

    pub fn magnitude(&self) -> f64 {
        self.abs
    }
}

/// `(ρ̄, p̄, ȷ̄, m̄)` at `r` by direct summation over every particle, each
/// with the sum of absolute contributions.
pub fn naive_fields(e: &ParticleEnsemble, d: f64, r: f64) -> [(f64, f64); 4] {
    let l = e.l();
    let mut acc = [Sum::default(); 4];
    for n in 0..e.len() {
        let en = energy(e.r[n], e.w[n], l[n]);
        let h = hat(r - e.r[n], d);
        acc[0].add(en * e.m[n] * h);
        acc[1].add(e.w[n] * e.w[n] / en * e.m[n] * h);
        acc[2].add(e.w[n] * e.m[n] * h);
        acc[3].add(en * e.m[n] * cumulative(r - e.r[n], d));
    }
    let s = 1.0 / (4.0 * PI * r * r * d);
    let scale = [s, s, s, 1.0];
    std::array::from_fn(|i| (scale[i] * acc[i].value(), scale[i] * acc[i].magnitude()))
}

/// Adaptive Simpson quadrature, applied separately on each interval between
/// consecutive `breaks`.
pub fn adaptive_simpson<F: Fn(f64) -> f64>(f: &F, breaks: &[f64], tol: f64) -> f64 {
    fn rec<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            left + right + delta / 15.0
        } else {
            rec(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1) + rec(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
        }
    }
    let mut total = 0.0;
    let share = tol / breaks.len().max(1) as f64;
    for p in breaks.windows(2) {
        let (a, b) = (p[0], p[1]);
        if b <= a {
            continue;
        }
        let (fa, fm, fb) = (f(a), f(0.5 * (a + b)), f(b));
        let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
        total += rec(f, a, b, fa, fm, fb, whole, share, 40);
    }
    total
}

/// A random ensemble with radii in `[r0, r1]`.
pub fn random_ensemble(rng: &mut impl Rng, n: usize, r0: f64, r1: f64, mass: f64) -> ParticleEnsemble {
    let r = (0..n).map(|_| rng.gen_range(r0..r1)).collect();
    let w = (0..n).map(|_| rng.gen_range(-0.8..0.8)).collect();
    let l = (0..n).map(|_| rng.gen_range(0.0..0.5)).collect();
    let m = (0..n).map(|_| rng.gen_range(0.0..2.0) * mass / n as f64).collect();
    ParticleEnsemble::new(r, w, l, m, 0.0).unwrap()
}

/// Sorted breakpoints `R ± δ, R` of the deposited profile, clipped to `[a, b]`.
pub fn kinks(e: &ParticleEnsemble, d: f64, a: f64, b: f64) -> Vec<f64> {
    let mut k: Vec<f64> = e
        .r
        .iter()
        .flat_map(|&r| [r - d, r, r + d])
        .chain([a, b])
        .filter(|&x| x >= a && x <= b)
        .collect();
    k.sort_by(f64::total_cmp);
    k.dedup();
    k
}

/// Sup of `|a - b|` relative to `1 + |b|`.
pub fn rel_gap(a: f64, b: f64) -> f64 {
    (a - b).abs() / (1.0 + b.abs())
}
