//! Small dense helpers for 2x2 matrices.

use crate::{Mat2, Point};

/// Spectral (operator 2-) norm of a 2x2 matrix in closed form.
pub fn spectral_norm(m: &Mat2) -> f64 {
    let fro2 = m.norm_squared();
    let det = m.determinant();
    let disc = (fro2 * fro2 - 4.0 * det * det).max(0.0);
    ((fro2 + disc.sqrt()) / 2.0).sqrt()
}

/// Unit vector at angle `theta`.
#[inline]
pub fn unit(theta: f64) -> Point {
    Point::new(theta.cos(), theta.sin())
}

/// `sup_{|v|=1} |A v| + |B v| - 2` over the unit circle.
///
/// The objective has period pi in the angle. A dense scan (which contains
/// both coordinate axes) is followed by golden-section refinement around
/// the best few bins.
pub fn pair_norm_sup(a: &Mat2, b: &Mat2) -> f64 {
    let f = |th: f64| {
        let v = unit(th);
        (a * v).norm() + (b * v).norm() - 2.0
    };
    sup_periodic(f, std::f64::consts::PI, 360)
}

/// Maximises a continuous `period`-periodic function by a dense scan of
/// `bins` samples plus local golden-section refinement.
pub fn sup_periodic(f: impl Fn(f64) -> f64, period: f64, bins: usize) -> f64 {
    let step = period / bins as f64;
    let vals: Vec<f64> = (0..bins).map(|k| f(k as f64 * step)).collect();
    let mut best = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    // Refine around local maxima of the scan.
    for k in 0..bins {
        let prev = vals[(k + bins - 1) % bins];
        let next = vals[(k + 1) % bins];
        if vals[k] >= prev && vals[k] >= next {
            let c = k as f64 * step;
            best = best.max(golden_max(&f, c - step, c + step, 60));
        }
    }
    best
}

/// Golden-section search for a maximum on `[lo, hi]`; returns the best value seen.
pub fn golden_max(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, iters: usize) -> f64 {
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = hi - g * (hi - lo);
    let mut x2 = lo + g * (hi - lo);
    let (mut f1, mut f2) = (f(x1), f(x2));
    let mut best = f1.max(f2);
    for _ in 0..iters {
        if f1 < f2 {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + g * (hi - lo);
            f2 = f(x2);
        } else {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - g * (hi - lo);
            f1 = f(x1);
        }
        best = best.max(f1).max(f2);
    }
    best
}
