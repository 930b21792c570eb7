//! Windowed kernel sums over radius-sorted particles.
//!
//! For each weight channel `c` we keep double-double prefix sums of `c`,
//! `c·R` and `c·R²`. Because the hat kernel is piecewise linear and its
//! antiderivative piecewise quadratic in `R`, any sum `Σ c_m χ_δ(s - R_m)` or
//! `Σ c_m χ(s - R_m)` reduces to a handful of window differences of these
//! moments. The extra precision absorbs the cancellation between moments of
//! size `R²·Σc` and results of size `δ²·Σc`.

use twofloat::TwoFloat;

#[derive(Debug, Clone)]
struct Prefix {
    m0: Vec<TwoFloat>,
    m1: Vec<TwoFloat>,
    m2: Vec<TwoFloat>,
}

impl Prefix {
    fn build(radii: &[f64], weights: &[f64]) -> Self {
        let n = radii.len();
        let zero = TwoFloat::from(0.0);
        let (mut m0, mut m1, mut m2) = (Vec::with_capacity(n + 1), Vec::with_capacity(n + 1), Vec::with_capacity(n + 1));
        let (mut a0, mut a1, mut a2) = (zero, zero, zero);
        m0.push(a0);
        m1.push(a1);
        m2.push(a2);
        for (&r, &c) in radii.iter().zip(weights) {
            let cr = TwoFloat::new_mul(c, r);
            a0 += c;
            a1 += cr;
            a2 += cr * r;
            m0.push(a0);
            m1.push(a1);
            m2.push(a2);
        }
        Self { m0, m1, m2 }
    }

    #[inline]
    fn range(&self, a: usize, b: usize) -> [TwoFloat; 3] {
        [self.m0[b] - self.m0[a], self.m1[b] - self.m1[a], self.m2[b] - self.m2[a]]
    }
}

/// Index boundaries of the kernel window around a query radius `s`.
///
/// Sorted particles `[0, lo)` lie at or below `s - δ`, `[lo, mid)` in
/// `(s - δ, s]`, `[mid, hi)` in `(s, s + δ)`, and the rest at or above `s + δ`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Window {
    pub lo: usize,
    pub mid: usize,
    pub hi: usize,
}

/// Per-channel moment sums restricted to one window; valid for every query
/// radius that produces the same [`Window`].
#[derive(Debug, Clone, Copy)]
pub(crate) struct WindowMoments {
    full: TwoFloat,
    left: [TwoFloat; 3],
    right: [TwoFloat; 3],
}

impl WindowMoments {
    /// `Σ c χ_δ(s - R)` over the window, with `χ_δ` the unit-height hat.
    #[inline]
    pub fn hat(&self, s: f64, delta: f64) -> TwoFloat {
        let u = TwoFloat::new_sub(delta, s);
        let v = TwoFloat::new_add(delta, s);
        let left = u * self.left[0] + self.left[1];
        let right = v * self.right[0] - self.right[1];
        (left + right) / delta
    }

    /// `d/ds` of [`WindowMoments::hat`], constant inside the window.
    #[inline]
    pub fn hat_slope(&self, delta: f64) -> f64 {
        f64::from(self.right[0] - self.left[0]) / delta
    }

    /// `Σ c χ(s - R)` over all particles, with `χ` the cumulative kernel.
    #[inline]
    pub fn cumulative(&self, s: f64, delta: f64) -> TwoFloat {
        let u = TwoFloat::new_sub(delta, s);
        let v = TwoFloat::new_add(delta, s);
        let two_d2 = 2.0 * delta * delta;
        // left ramp: 1 - (δ - s + R)²/(2δ²)
        let lq = u * u * self.left[0] + 2.0 * u * self.left[1] + self.left[2];
        // right ramp: (s + δ - R)²/(2δ²)
        let rq = v * v * self.right[0] - 2.0 * v * self.right[1] + self.right[2];
        self.full + self.left[0] + (rq - lq) / two_d2
    }
}

/// Sorted radii plus prefix moments for a fixed set of weight channels.
#[derive(Debug, Clone)]
pub(crate) struct KernelSums {
    radii: Vec<f64>,
    delta: f64,
    channels: Vec<Prefix>,
}

impl KernelSums {
    /// `radii` must be sorted ascending; `channels[k][i]` is the weight of the
    /// particle at sorted position `i` in channel `k`.
    pub fn new(radii: Vec<f64>, delta: f64, channels: &[Vec<f64>]) -> Self {
        debug_assert!(radii.windows(2).all(|p| p[0] <= p[1]));
        let channels = channels.iter().map(|w| Prefix::build(&radii, w)).collect();
        Self { radii, delta, channels }
    }

    pub fn radii(&self) -> &[f64] {
        &self.radii
    }

    pub fn total(&self, channel: usize) -> TwoFloat {
        *self.channels[channel].m0.last().unwrap()
    }

    #[inline]
    pub fn window(&self, s: f64) -> Window {
        let d = self.delta;
        let lo = self.radii.partition_point(|&x| x <= s - d);
        let mid = lo + self.radii[lo..].partition_point(|&x| x <= s);
        let hi = mid + self.radii[mid..].partition_point(|&x| x < s + d);
        Window { lo, mid, hi }
    }

    #[inline]
    pub fn moments(&self, channel: usize, w: Window) -> WindowMoments {
        let p = &self.channels[channel];
        WindowMoments {
            full: p.m0[w.lo],
            left: p.range(w.lo, w.mid),
            right: p.range(w.mid, w.hi),
        }
    }

    /// `Σ c χ_δ(s - R)` for channel `channel`.
    pub fn hat_sum(&self, channel: usize, s: f64) -> TwoFloat {
        let w = self.window(s);
        self.moments(channel, w).hat(s, self.delta)
    }

    /// `Σ c χ(s - R)` for channel `channel`.
    pub fn cumulative_sum(&self, channel: usize, s: f64) -> TwoFloat {
        let w = self.window(s);
        self.moments(channel, w).cumulative(s, self.delta)
    }
}
