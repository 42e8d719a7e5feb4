//! Discrete jump detection on cell edges and containment of one jump set in
//! another.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::grid::GridImage;
use crate::Point;

/// One detected jump across a cell edge. `normal` points from the lower to
/// the upper one-sided value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JumpSample {
    pub location: [f64; 2],
    pub normal: [f64; 2],
    pub upper: f64,
    pub lower: f64,
    pub magnitude: f64,
    /// Edge midpoint in half-cell units: `(2i + 1, 2j + 1)` is the centre of
    /// cell `(i, j)`.
    pub key: (i64, i64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JumpSet {
    pub width: usize,
    pub height: usize,
    pub spacing: f64,
    pub threshold: f64,
    pub samples: Vec<JumpSample>,
}

impl JumpSet {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Total edge length `h * |J|`.
    pub fn length(&self) -> f64 {
        self.spacing * self.samples.len() as f64
    }
}

pub const DEFAULT_WINDOW: usize = 3;
pub const DEFAULT_THRESHOLD_FRACTION: f64 = 0.25;

/// Default threshold: a quarter of the range of `u`.
pub fn default_threshold(u: &GridImage) -> f64 {
    DEFAULT_THRESHOLD_FRACTION * (u.max() - u.min())
}

fn side_stats(vals: impl Iterator<Item = f64>) -> (f64, f64) {
    let (mut lo, mut hi, mut sum, mut n) = (f64::INFINITY, f64::NEG_INFINITY, 0.0, 0usize);
    for v in vals {
        lo = lo.min(v);
        hi = hi.max(v);
        sum += v;
        n += 1;
    }
    (sum / n as f64, hi - lo)
}

/// Scans every interior cell edge. The two half-windows hold up to `window`
/// cells on either side along the edge normal (clipped at the border); an
/// edge is a jump when the means differ by more than `threshold` and each
/// side spreads by less than `threshold / 2`.
pub fn detect_jumps(u: &GridImage, window: usize, threshold: f64) -> Result<JumpSet> {
    if window == 0 {
        return Err(invalid("window", "must be at least 1"));
    }
    if !(threshold > 0.0) {
        return Err(invalid("threshold", "must be positive"));
    }
    let (ht, w) = u.dims();
    let h = u.spacing();
    let mut samples = Vec::new();
    let mut push = |m_minus: f64, m_plus: f64, axis: Point, mid: Point, key: (i64, i64)| {
        let (upper, lower, normal) = if m_plus >= m_minus {
            (m_plus, m_minus, axis)
        } else {
            (m_minus, m_plus, -axis)
        };
        samples.push(JumpSample {
            location: [mid.x, mid.y],
            normal: [normal.x, normal.y],
            upper,
            lower,
            magnitude: upper - lower,
            key,
        });
    };
    let accept = |(m1, s1): (f64, f64), (m2, s2): (f64, f64)| {
        (m2 - m1).abs() > threshold && s1 < 0.5 * threshold && s2 < 0.5 * threshold
    };

    for i in 0..ht {
        for j in 0..w {
            // Edge between (i, j) and (i + 1, j).
            if i + 1 < ht {
                let minus = side_stats((i.saturating_sub(window - 1)..=i).map(|k| u.get(k, j)));
                let plus = side_stats((i + 1..(i + 1 + window).min(ht)).map(|k| u.get(k, j)));
                if accept(minus, plus) {
                    let mid = Point::new((i as f64 + 1.0) * h, (j as f64 + 0.5) * h);
                    push(minus.0, plus.0, Point::new(1.0, 0.0), mid, (2 * i as i64 + 2, 2 * j as i64 + 1));
                }
            }
            // Edge between (i, j) and (i, j + 1).
            if j + 1 < w {
                let minus = side_stats((j.saturating_sub(window - 1)..=j).map(|k| u.get(i, k)));
                let plus = side_stats((j + 1..(j + 1 + window).min(w)).map(|k| u.get(i, k)));
                if accept(minus, plus) {
                    let mid = Point::new((i as f64 + 0.5) * h, (j as f64 + 1.0) * h);
                    push(minus.0, plus.0, Point::new(0.0, 1.0), mid, (2 * i as i64 + 1, 2 * j as i64 + 2));
                }
            }
        }
    }
    Ok(JumpSet {
        width: w,
        height: ht,
        spacing: h,
        threshold,
        samples,
    })
}

/// Length fraction of `ju` lying farther than `k + 1/2` cells (Chebyshev
/// distance between edge midpoints) from every sample of `jf`. The half cell
/// lets a jump move onto a perpendicular edge of the same cell.
pub fn containment_excess(ju: &JumpSet, jf: &JumpSet, k: usize) -> Result<f64> {
    if (ju.width, ju.height) != (jf.width, jf.height) || ju.spacing != jf.spacing {
        return Err(invalid("jf", "jump sets come from different grids"));
    }
    if ju.is_empty() {
        return Ok(0.0);
    }
    let keys: HashSet<(i64, i64)> = jf.samples.iter().map(|s| s.key).collect();
    let reach = 2 * k as i64 + 1;
    let outside = ju
        .samples
        .iter()
        .filter(|s| {
            let (a, b) = s.key;
            !(-reach..=reach).any(|da| (-reach..=reach).any(|db| keys.contains(&(a + da, b + db))))
        })
        .count();
    Ok(outside as f64 / ju.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(keys: &[(i64, i64)]) -> JumpSet {
        JumpSet {
            width: 32,
            height: 32,
            spacing: 1.0 / 32.0,
            threshold: 0.5,
            samples: keys
                .iter()
                .map(|&key| JumpSample {
                    location: [0.0; 2],
                    normal: [1.0, 0.0],
                    upper: 1.0,
                    lower: 0.0,
                    magnitude: 1.0,
                    key,
                })
                .collect(),
        }
    }

    #[test]
    fn constant_image_has_no_jumps() {
        let u = GridImage::constant(16, 16, 1.0 / 16.0, 3.0).unwrap();
        assert!(detect_jumps(&u, 3, 0.1).unwrap().is_empty());
    }

    #[test]
    fn half_plane_gives_one_sample_per_interface_edge() {
        let n = 20;
        let u = GridImage::from_fn(n, n, 1.0 / n as f64, |x| if x.x > 0.5 { 1.0 } else { 0.0 }).unwrap();
        let js = detect_jumps(&u, 3, 0.5).unwrap();
        assert_eq!(js.len(), n);
        for s in &js.samples {
            assert_eq!(s.magnitude, 1.0);
            assert_eq!(s.normal, [1.0, 0.0]);
            assert!((s.location[0] - 0.5).abs() < 1e-15);
        }
        // Flipped: normal still points to the upper value.
        let v = u.map(|x| 1.0 - x);
        let jv = detect_jumps(&v, 3, 0.5).unwrap();
        assert!(jv.samples.iter().all(|s| s.normal == [-1.0, 0.0]));
    }

    #[test]
    fn gentle_ramp_is_ignored() {
        let n = 32;
        let theta = 0.3;
        // Per-cell increment below theta / (2 w).
        let inc = 0.9 * theta / 6.0;
        let u = GridImage::from_fn(n, n, 1.0 / n as f64, |x| inc * x.y * n as f64).unwrap();
        assert!(detect_jumps(&u, 3, theta).unwrap().is_empty());
    }

    #[test]
    fn rejects_bad_parameters() {
        let u = GridImage::constant(4, 4, 0.25, 0.0).unwrap();
        assert!(detect_jumps(&u, 0, 0.1).is_err());
        assert!(detect_jumps(&u, 1, 0.0).is_err());
    }

    #[test]
    fn containment_counts() {
        let jf = set(&[(10, 11), (12, 11), (14, 11)]);
        assert_eq!(containment_excess(&jf, &jf, 0).unwrap(), 0.0);
        assert_eq!(containment_excess(&set(&[]), &jf, 1).unwrap(), 0.0);
        let mut keys: Vec<(i64, i64)> = (0..9).map(|k| (10 + 2 * (k % 3), 11)).collect();
        keys.push((40, 41));
        assert!((containment_excess(&set(&keys), &jf, 1).unwrap() - 0.1).abs() < 1e-15);
        // Perpendicular edge of the same cell is within half a cell.
        assert_eq!(containment_excess(&set(&[(11, 12)]), &jf, 0).unwrap(), 0.0);
        // One cell away needs k = 1.
        assert_eq!(containment_excess(&set(&[(10, 13)]), &jf, 0).unwrap(), 1.0);
        assert_eq!(containment_excess(&set(&[(10, 13)]), &jf, 1).unwrap(), 0.0);
    }
}
