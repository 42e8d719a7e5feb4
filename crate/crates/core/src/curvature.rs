//! Level-line extraction, circle fits, the graph mean-curvature operator and
//! the finite-difference R-curvature of a jump interface.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::energies::RegulariserSpec;
use crate::error::{invalid, Error, Result};
use crate::grid::GridImage;
use crate::pushforward::{regulariser_change, FunctionalImage, QuadratureSpec};
use crate::shift::ShiftTransform;
use crate::Point;

/// A polyline through the cell-centre lattice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Contour {
    pub points: Vec<Point>,
    pub closed: bool,
}

impl Contour {
    pub fn length(&self) -> f64 {
        let open: f64 = self.points.windows(2).map(|w| (w[1] - w[0]).norm()).sum();
        if self.closed && self.points.len() > 1 {
            open + (self.points[0] - self.points[self.points.len() - 1]).norm()
        } else {
            open
        }
    }
}

/// Marching squares on the cell centres of `u`. Cells with `u > level` are
/// inside; saddles are resolved by the mean of the four corners.
pub fn extract_contours(u: &GridImage, level: f64) -> Vec<Contour> {
    let (ht, w) = u.dims();
    if ht < 2 || w < 2 {
        return Vec::new();
    }
    let inside = |i: usize, j: usize| u.get(i, j) > level;
    // Edge ids: horizontal (i, j)-(i, j+1) and vertical (i, j)-(i+1, j).
    let hid = |i: usize, j: usize| 2 * (i * w + j);
    let vid = |i: usize, j: usize| 2 * (i * w + j) + 1;
    let crossing = |a: (usize, usize), b: (usize, usize)| -> Point {
        let (ua, ub) = (u.get(a.0, a.1), u.get(b.0, b.1));
        let t = (level - ua) / (ub - ua);
        u.centre(a.0, a.1) + (u.centre(b.0, b.1) - u.centre(a.0, a.1)) * t
    };

    let mut points: HashMap<usize, Point> = HashMap::new();
    let mut segments: Vec<(usize, usize)> = Vec::new();
    for i in 0..ht - 1 {
        for j in 0..w - 1 {
            let corners = [(i, j), (i, j + 1), (i + 1, j + 1), (i + 1, j)];
            let ins = corners.map(|(a, b)| inside(a, b));
            let n_in = ins.iter().filter(|&&b| b).count();
            if n_in == 0 || n_in == 4 {
                continue;
            }
            // Edge k joins corners k and k+1.
            let edges = [hid(i, j), vid(i, j + 1), hid(i + 1, j), vid(i, j)];
            let ends = [
                (corners[0], corners[1]),
                (corners[1], corners[2]),
                (corners[3], corners[2]),
                (corners[0], corners[3]),
            ];
            let mut cut = Vec::new();
            for k in 0..4 {
                if ins[k] != ins[(k + 1) % 4] {
                    points.entry(edges[k]).or_insert_with(|| crossing(ends[k].0, ends[k].1));
                    cut.push(k);
                }
            }
            if cut.len() == 2 {
                segments.push((edges[cut[0]], edges[cut[1]]));
            } else {
                // Saddle: separate either the inside or the outside corners.
                let mean = corners.iter().map(|&(a, b)| u.get(a, b)).sum::<f64>() / 4.0;
                let centre_in = mean > level;
                for c in 0..4 {
                    if ins[c] != centre_in {
                        // Corner c sits between edges c - 1 and c.
                        segments.push((edges[(c + 3) % 4], edges[c]));
                    }
                }
            }
        }
    }

    let mut by_edge: HashMap<usize, Vec<usize>> = HashMap::new();
    for (s, &(a, b)) in segments.iter().enumerate() {
        by_edge.entry(a).or_default().push(s);
        by_edge.entry(b).or_default().push(s);
    }
    let mut used = vec![false; segments.len()];
    let mut contours = Vec::new();
    // Start open chains at border edges (edges with a single segment).
    let mut starts: Vec<usize> = by_edge.iter().filter(|(_, v)| v.len() == 1).map(|(&e, _)| e).collect();
    starts.sort_unstable();
    let mut order: Vec<usize> = segments.iter().map(|s| s.0).collect();
    order.sort_unstable();
    for start in starts.into_iter().chain(order) {
        let Some(&first) = by_edge[&start].iter().find(|&&s| !used[s]) else {
            continue;
        };
        let mut chain = vec![start];
        let mut seg = first;
        let mut edge = start;
        loop {
            used[seg] = true;
            let (a, b) = segments[seg];
            edge = if a == edge { b } else { a };
            chain.push(edge);
            match by_edge[&edge].iter().find(|&&s| !used[s]) {
                Some(&next) => seg = next,
                None => break,
            }
        }
        let closed = chain.len() > 2 && chain[0] == chain[chain.len() - 1];
        if closed {
            chain.pop();
        }
        contours.push(Contour {
            points: chain.iter().map(|e| points[e]).collect(),
            closed,
        });
    }
    contours
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CircleFit {
    pub centre: Point,
    /// Infinite for collinear input.
    pub radius: f64,
    /// Root-mean-square of `|x - centre| - radius`.
    pub rms: f64,
}

impl CircleFit {
    pub fn curvature(&self) -> f64 {
        if self.radius.is_finite() {
            1.0 / self.radius
        } else {
            0.0
        }
    }
}

/// Algebraic (Kasa) least-squares circle fit.
pub fn fit_circle(points: &[Point]) -> Result<CircleFit> {
    if points.len() < 3 {
        return Err(Error::TooFewSamples {
            needed: 3,
            got: points.len(),
        });
    }
    let n = points.len();
    let mean = points.iter().fold(Point::zeros(), |s, p| s + p) / n as f64;
    let scale = points.iter().map(|p| (p - mean).norm()).fold(0.0, f64::max);
    if scale == 0.0 {
        return Err(invalid("points", "all points coincide"));
    }
    let mut a = DMatrix::zeros(n, 3);
    let mut b = DVector::zeros(n);
    for (k, p) in points.iter().enumerate() {
        let q = (p - mean) / scale;
        a[(k, 0)] = q.x;
        a[(k, 1)] = q.y;
        a[(k, 2)] = 1.0;
        b[k] = -(q.x * q.x + q.y * q.y);
    }
    let svd = a.svd(true, true);
    let smax = svd.singular_values.max();
    let line = |rms| CircleFit {
        centre: Point::new(f64::INFINITY, f64::INFINITY),
        radius: f64::INFINITY,
        rms,
    };
    if svd.singular_values.min() <= 1e-12 * smax {
        return Ok(line(0.0));
    }
    let sol = svd.solve(&b, 0.0).map_err(|e| invalid("points", e))?;
    let c = Point::new(-0.5 * sol[0], -0.5 * sol[1]);
    let r2 = c.norm_squared() - sol[2];
    if !(r2 > 0.0) || !r2.is_finite() || r2.sqrt() > 1e8 {
        return Ok(line(0.0));
    }
    let centre = mean + c * scale;
    let radius = r2.sqrt() * scale;
    let rms = (points.iter().map(|p| ((p - centre).norm() - radius).powi(2)).sum::<f64>() / n as f64).sqrt();
    Ok(CircleFit { centre, radius, rms })
}

/// Per-point curvature along the level lines of an image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvatureReport {
    pub level: f64,
    pub arc_window: f64,
    pub points: Vec<Point>,
    /// Index of the contour each point belongs to.
    pub contour: Vec<usize>,
    pub curvature: Vec<f64>,
    /// Circle fitted to the longest contour.
    pub radius: f64,
    /// Distances of the longest contour's points from that circle.
    pub residuals: Vec<f64>,
}

impl CurvatureReport {
    /// Fits one circle to the points selected by `keep`.
    pub fn fit_segment(&self, keep: impl Fn(Point) -> bool) -> Result<CircleFit> {
        let pts: Vec<Point> = self.points.iter().copied().filter(|&p| keep(p)).collect();
        fit_circle(&pts)
    }

    /// Largest `|curvature|` over the points selected by `keep`.
    pub fn max_curvature_on(&self, keep: impl Fn(Point) -> bool) -> Option<f64> {
        self.points
            .iter()
            .zip(&self.curvature)
            .filter(|(p, _)| keep(**p))
            .map(|(_, k)| k.abs())
            .reduce(f64::max)
    }
}

/// Curvature at each contour point from a circle fit over the points within
/// half an arc window on either side (along the contour).
pub fn level_line_curvature(u: &GridImage, level: f64, arc_window: f64) -> Result<CurvatureReport> {
    if !(arc_window > 0.0) {
        return Err(invalid("arc_window", "must be positive"));
    }
    let contours = extract_contours(u, level);
    if contours.is_empty() {
        return Err(Error::EmptyContour(level));
    }
    let mut report = CurvatureReport {
        level,
        arc_window,
        points: Vec::new(),
        contour: Vec::new(),
        curvature: Vec::new(),
        radius: f64::INFINITY,
        residuals: Vec::new(),
    };
    for (ci, c) in contours.iter().enumerate() {
        let n = c.points.len();
        for k in 0..n {
            let window = arc_neighbours(c, k, 0.5 * arc_window);
            let kappa = if window.len() >= 3 {
                fit_circle(&window).map(|f| f.curvature()).unwrap_or(0.0)
            } else {
                0.0
            };
            report.points.push(c.points[k]);
            report.contour.push(ci);
            report.curvature.push(kappa);
        }
    }
    let longest = contours
        .iter()
        .max_by(|a, b| a.length().total_cmp(&b.length()))
        .expect("non-empty");
    if let Ok(fit) = fit_circle(&longest.points) {
        report.radius = fit.radius;
        report.residuals = if fit.radius.is_finite() {
            longest.points.iter().map(|p| (p - fit.centre).norm() - fit.radius).collect()
        } else {
            Vec::new()
        };
    }
    Ok(report)
}

fn arc_neighbours(c: &Contour, k: usize, half: f64) -> Vec<Point> {
    let n = c.points.len();
    let mut out = vec![c.points[k]];
    for dir in [1isize, -1] {
        let mut len = 0.0;
        let mut prev = k;
        for step in 1..n {
            let idx = k as isize + dir * step as isize;
            let next = if c.closed {
                idx.rem_euclid(n as isize) as usize
            } else if idx < 0 || idx >= n as isize {
                break;
            } else {
                idx as usize
            };
            len += (c.points[next] - c.points[prev]).norm();
            if len > half {
                break;
            }
            if dir == 1 {
                out.push(c.points[next]);
            } else {
                out.insert(0, c.points[next]);
            }
            prev = next;
        }
    }
    if c.closed && out.len() > n {
        out.truncate(n);
    }
    out
}

/// Radius of the quarter-circle rounding that removes, from the corner of
/// `f` at `corner`, the mass `f - u` lost in the cells within `half_box`
/// (Chebyshev) of it: `r^2 (1 - pi/4) = sum (f - u) h^2`.
pub fn corner_cut_radius(f: &GridImage, u: &GridImage, corner: Point, half_box: f64) -> Result<f64> {
    if f.dims() != u.dims() {
        return Err(Error::DimensionMismatch {
            expected: f.dims(),
            found: u.dims(),
        });
    }
    let (ht, w) = f.dims();
    let h2 = f.spacing() * f.spacing();
    let mut lost = 0.0;
    for i in 0..ht {
        for j in 0..w {
            let c = f.centre(i, j);
            if (c.x - corner.x).abs() < half_box && (c.y - corner.y).abs() < half_box {
                lost += (f.get(i, j) - u.get(i, j)) * h2;
            }
        }
    }
    Ok((lost.max(0.0) / (1.0 - std::f64::consts::FRAC_PI_4)).sqrt())
}

/// `-(f' / sqrt(1 + f'^2))'` by differences of half-point fluxes, at the
/// interior samples `1..n-1`.
pub fn mean_curvature_of_graph(f: &[f64], spacing: f64) -> Result<Vec<f64>> {
    if f.len() < 5 {
        return Err(Error::TooFewSamples { needed: 5, got: f.len() });
    }
    if !(spacing > 0.0) {
        return Err(invalid("spacing", "must be positive"));
    }
    let flux: Vec<f64> = f
        .windows(2)
        .map(|w| {
            let d = (w[1] - w[0]) / spacing;
            d / (1.0 + d * d).sqrt()
        })
        .collect();
    Ok(flux.windows(2).map(|q| -(q[1] - q[0]) / spacing).collect())
}

/// Finite-difference R-curvature at one magnitude and its half.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RCurvature {
    pub rho: f64,
    pub r: f64,
    /// `I_r = r^2 I_1`.
    pub i_r: f64,
    /// `(R(u_gamma) - R(u)) / (rho I_r)` at `rho`.
    pub at_rho: f64,
    /// The same at `rho / 2`.
    pub at_half_rho: f64,
    /// `2 D(rho/2) - D(rho)`, cancelling the term linear in `rho`.
    pub estimate: f64,
}

/// Difference quotient of the regulariser under the shift `t` (whose
/// magnitude is used as `rho`), normalised by the bump mass.
pub fn r_curvature_estimate(
    u: &FunctionalImage,
    t: &ShiftTransform,
    reg: &RegulariserSpec,
    q: QuadratureSpec,
) -> Result<RCurvature> {
    let rho = t.rho();
    if rho == 0.0 {
        return Err(invalid("rho", "must be non-zero"));
    }
    let r = t.r();
    let i_r = r * r * t.bump().integral();
    let quotient = |tr: &ShiftTransform| -> Result<f64> { Ok(regulariser_change(u, tr, reg, q)? / (tr.rho() * i_r)) };
    let at_rho = quotient(t)?;
    let at_half_rho = quotient(&t.with_rho(0.5 * rho)?)?;
    Ok(RCurvature {
        rho,
        r,
        i_r,
        at_rho,
        at_half_rho,
        estimate: 2.0 * at_half_rho - at_rho,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::shift::{Bump, LipschitzGraph};

    #[test]
    fn circle_fit_recovers_exact_circle() {
        let c = Point::new(0.3, -0.2);
        let pts: Vec<Point> = (0..7).map(|k| c + crate::linalg::unit(0.3 * k as f64) * 0.7).collect();
        let fit = fit_circle(&pts).unwrap();
        assert!((fit.radius - 0.7).abs() < 1e-12);
        assert!((fit.centre - c).norm() < 1e-12);
        let line: Vec<Point> = (0..5).map(|k| Point::new(k as f64, 2.0 * k as f64)).collect();
        assert_eq!(fit_circle(&line).unwrap().curvature(), 0.0);
        assert!(fit_circle(&pts[..2]).is_err());
    }

    #[test]
    fn disk_contour_radius() {
        let n = 512;
        let r = 0.3;
        let u = GridImage::from_fn(n, n, 1.0 / n as f64, |x| {
            if (x - Point::new(0.5, 0.5)).norm() < r {
                1.0
            } else {
                0.0
            }
        })
        .unwrap();
        let rep = level_line_curvature(&u, 0.5, 0.1).unwrap();
        assert!((rep.radius - r).abs() / r < 0.02, "radius {}", rep.radius);
        let contours = extract_contours(&u, 0.5);
        assert_eq!(contours.len(), 1);
        assert!(contours[0].closed);
    }

    #[test]
    fn straight_edge_has_zero_curvature() {
        let n = 64;
        let u = GridImage::from_fn(n, n, 1.0 / n as f64, |x| if x.y < 0.4 { 1.0 } else { 0.0 }).unwrap();
        let rep = level_line_curvature(&u, 0.5, 0.1).unwrap();
        assert!(rep.curvature.iter().all(|k| k.abs() < 1e-9));
        let c = extract_contours(&u, 0.5);
        assert_eq!(c.len(), 1);
        assert!(!c[0].closed);
        assert!((c[0].length() - (n - 1) as f64 / n as f64).abs() < 1e-12);
    }

    #[test]
    fn saddle_is_resolved_by_mean() {
        // Checkerboard 2x2 with a high mean keeps the inside corners joined.
        let u = GridImage::new(2, 2, 1.0, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        assert_eq!(extract_contours(&u, 0.4).len(), 2);
        assert_eq!(extract_contours(&u, 0.6).len(), 2);
        assert!(extract_contours(&u, 2.0).is_empty());
        let err = level_line_curvature(&u, 2.0, 1.0).unwrap_err();
        assert!(matches!(err, Error::EmptyContour(_)));
    }

    #[test]
    fn graph_curvature_cases() {
        let h = 1e-3;
        assert!(mean_curvature_of_graph(&[1.0; 10], h).unwrap().iter().all(|&k| k == 0.0));
        let lin: Vec<f64> = (0..10).map(|k| 0.5 + 2.0 * k as f64 * h).collect();
        assert!(mean_curvature_of_graph(&lin, h).unwrap().iter().all(|k| k.abs() < 1e-6));
        assert!(mean_curvature_of_graph(&[0.0; 4], h).is_err());
        let rr = 0.5;
        let m = (0.5 * rr / h).round() as i64;
        let f: Vec<f64> = (-m..=m).map(|k| (rr * rr - (k as f64 * h).powi(2)).sqrt()).collect();
        let kappa = mean_curvature_of_graph(&f, h).unwrap();
        assert_eq!(kappa.len(), f.len() - 2);
        assert!(kappa.iter().all(|k| (k * rr - 1.0).abs() < 1e-2));
    }

    #[test]
    fn corner_cut_of_a_rounded_square() {
        let n = 512;
        let r = 0.05;
        let f = GridImage::from_fn(n, n, 1.0 / n as f64, |x| if x.x > 0.25 && x.y > 0.25 { 1.0 } else { 0.0 }).unwrap();
        let c = Point::new(0.25 + r, 0.25 + r);
        let u = f.with_values(
            (0..n * n)
                .map(|k| {
                    let x = f.centre(k / n, k % n);
                    let cut = x.x < c.x && x.y < c.y && (x - c).norm() > r;
                    if cut { 0.0 } else { f.values()[k] }
                })
                .collect(),
        );
        let est = corner_cut_radius(&f, &u, Point::new(0.25, 0.25), 2.0 * r).unwrap();
        assert!((est - r).abs() / r < 0.02, "{est}");
        assert_eq!(corner_cut_radius(&f, &f, Point::new(0.25, 0.25), 0.1).unwrap(), 0.0);
    }

    #[test]
    fn flat_interface_has_no_r_curvature() {
        let g = LipschitzGraph::flat(Point::new(1.0, 0.0), 0.5, 0.5, 0.4).unwrap();
        let u = FunctionalImage::step(g.clone(), 1.0, 0.0);
        let t = ShiftTransform::new(g, 0.5, 1e-2, 1e-3, Bump::Standard).unwrap();
        let reg = RegulariserSpec::tv(0.1).unwrap();
        let est = r_curvature_estimate(&u, &t, &reg, QuadratureSpec::default()).unwrap();
        assert!(est.at_rho.abs() <= 1e-2 && est.estimate.abs() <= 1e-2, "{est:?}");
    }
}
