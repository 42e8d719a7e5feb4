//! Discrete images on a uniform 2-D grid and the finite-difference operators
//! used throughout: forward-difference gradient, its negative adjoint
//! (backward divergence), isotropic total variation and related measures.
//!
//! Indexing convention: cell `(i, j)` is row `i`, column `j`, stored
//! row-major. The first coordinate axis `x1` runs along rows (`i`), the
//! second `x2` along columns (`j`); the centre of cell `(i, j)` sits at
//! `((i + 0.5) h, (j + 0.5) h)`. Vector-field component `d1` is the
//! derivative along `x1`, `d2` along `x2`.
//!
//! All reductions run in row-major order so results are bit-reproducible.

use crate::error::{invalid, Error, Result};
use crate::Point;

/// Scalar field sampled at cell centres of a `height x width` grid.
#[derive(Debug, Clone, PartialEq)]
pub struct GridImage {
    width: usize,
    height: usize,
    spacing: f64,
    values: Vec<f64>,
}

/// Per-cell 2-vector, e.g. a discrete gradient or a dual variable.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorField {
    width: usize,
    height: usize,
    spacing: f64,
    pub d1: Vec<f64>,
    pub d2: Vec<f64>,
}

/// Boolean cell selection over a grid.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    width: usize,
    height: usize,
    cells: Vec<bool>,
}

fn check_dims(width: usize, height: usize) -> Result<()> {
    if width < 2 || height < 2 {
        return Err(Error::InvalidGrid(format!(
            "grid must be at least 2x2, got {height}x{width}"
        )));
    }
    Ok(())
}

impl GridImage {
    pub fn new(width: usize, height: usize, spacing: f64, values: Vec<f64>) -> Result<Self> {
        check_dims(width, height)?;
        if !(spacing > 0.0 && spacing.is_finite()) {
            return Err(invalid("spacing", format!("must be positive, got {spacing}")));
        }
        if values.len() != width * height {
            return Err(Error::InvalidGrid(format!(
                "expected {} values, got {}",
                width * height,
                values.len()
            )));
        }
        if let Some(k) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidGrid(format!("non-finite value at index {k}")));
        }
        Ok(Self {
            width,
            height,
            spacing,
            values,
        })
    }

    pub fn constant(width: usize, height: usize, spacing: f64, value: f64) -> Result<Self> {
        Self::new(width, height, spacing, vec![value; width * height])
    }

    /// Samples `field` at every cell centre.
    pub fn from_fn(
        width: usize,
        height: usize,
        spacing: f64,
        field: impl Fn(Point) -> f64,
    ) -> Result<Self> {
        let mut values = Vec::with_capacity(width * height);
        for i in 0..height {
            for j in 0..width {
                values.push(field(cell_centre(i, j, spacing)));
            }
        }
        Self::new(width, height, spacing, values)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.width + j]
    }

    pub fn centre(&self, i: usize, j: usize) -> Point {
        cell_centre(i, j, self.spacing)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    /// Same grid, new values. Panics if the length differs.
    pub fn with_values(&self, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), self.values.len());
        Self {
            values,
            ..self.clone()
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        self.with_values(self.values.iter().map(|&v| f(v)).collect())
    }

    pub fn scaled(&self, c: f64) -> Self {
        self.map(|v| c * v)
    }

    /// Bilinear interpolation at a point given in domain coordinates,
    /// clamped to the cell-centre hull.
    pub fn interpolate(&self, x: Point) -> f64 {
        let h = self.spacing;
        let fi = (x[0] / h - 0.5).clamp(0.0, (self.height - 1) as f64);
        let fj = (x[1] / h - 0.5).clamp(0.0, (self.width - 1) as f64);
        let i0 = (fi.floor() as usize).min(self.height - 2);
        let j0 = (fj.floor() as usize).min(self.width - 2);
        let (ti, tj) = (fi - i0 as f64, fj - j0 as f64);
        let v00 = self.get(i0, j0);
        let v01 = self.get(i0, j0 + 1);
        let v10 = self.get(i0 + 1, j0);
        let v11 = self.get(i0 + 1, j0 + 1);
        (1.0 - ti) * ((1.0 - tj) * v00 + tj * v01) + ti * ((1.0 - tj) * v10 + tj * v11)
    }

    /// Rotates the image by 90 degrees (new `(i, j)` = old `(j, W-1-i)`).
    pub fn rotate90(&self) -> Self {
        let (w, h) = (self.width, self.height);
        let mut values = Vec::with_capacity(w * h);
        for i in 0..w {
            for j in 0..h {
                values.push(self.get(j, w - 1 - i));
            }
        }
        Self {
            width: h,
            height: w,
            spacing: self.spacing,
            values,
        }
    }

    fn same_grid(&self, width: usize, height: usize) -> Result<()> {
        if self.width != width || self.height != height {
            return Err(Error::DimensionMismatch {
                expected: (self.height, self.width),
                found: (height, width),
            });
        }
        Ok(())
    }
}

#[inline]
pub(crate) fn cell_centre(i: usize, j: usize, h: f64) -> Point {
    Point::new((i as f64 + 0.5) * h, (j as f64 + 0.5) * h)
}

impl VectorField {
    pub fn zeros(width: usize, height: usize, spacing: f64) -> Self {
        Self {
            width,
            height,
            spacing,
            d1: vec![0.0; width * height],
            d2: vec![0.0; width * height],
        }
    }

    pub fn new(
        width: usize,
        height: usize,
        spacing: f64,
        d1: Vec<f64>,
        d2: Vec<f64>,
    ) -> Result<Self> {
        check_dims(width, height)?;
        if d1.len() != width * height || d2.len() != width * height {
            return Err(Error::InvalidGrid("component length mismatch".into()));
        }
        if d1.iter().chain(&d2).any(|v| !v.is_finite()) {
            return Err(Error::InvalidGrid("non-finite vector entry".into()));
        }
        Ok(Self {
            width,
            height,
            spacing,
            d1,
            d2,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    #[inline]
    pub fn norm_at(&self, k: usize) -> f64 {
        self.d1[k].hypot(self.d2[k])
    }

    /// Sum over cells of the Euclidean inner product (no area weight).
    pub fn dot(&self, other: &VectorField) -> f64 {
        let mut s = 0.0;
        for k in 0..self.d1.len() {
            s += self.d1[k] * other.d1[k] + self.d2[k] * other.d2[k];
        }
        s
    }
}

impl Mask {
    pub fn new(width: usize, height: usize, cells: Vec<bool>) -> Result<Self> {
        check_dims(width, height)?;
        if cells.len() != width * height {
            return Err(Error::InvalidGrid("mask length mismatch".into()));
        }
        Ok(Self {
            width,
            height,
            cells,
        })
    }

    pub fn full(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            cells: vec![true; width * height],
        }
    }

    pub fn empty(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            cells: vec![false; width * height],
        }
    }

    /// Selects the cells whose centre satisfies `pred`.
    pub fn from_fn(width: usize, height: usize, spacing: f64, pred: impl Fn(Point) -> bool) -> Self {
        let mut cells = Vec::with_capacity(width * height);
        for i in 0..height {
            for j in 0..width {
                cells.push(pred(cell_centre(i, j, spacing)));
            }
        }
        Self {
            width,
            height,
            cells,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn cells(&self) -> &[bool] {
        &self.cells
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> bool {
        self.cells[i * self.width + j]
    }

    pub fn count(&self) -> usize {
        self.cells.iter().filter(|&&c| c).count()
    }

    /// The 0/1 indicator image of the selection.
    pub fn indicator(&self, spacing: f64) -> Result<GridImage> {
        GridImage::new(
            self.width,
            self.height,
            spacing,
            self.cells.iter().map(|&c| if c { 1.0 } else { 0.0 }).collect(),
        )
    }
}

/// Forward differences divided by the spacing; the difference leaving the
/// last row/column is zero (Neumann boundary).
pub fn grad_forward(u: &GridImage) -> VectorField {
    let (w, ht, h) = (u.width, u.height, u.spacing);
    let mut g = VectorField::zeros(w, ht, h);
    let v = &u.values;
    for i in 0..ht {
        for j in 0..w {
            let k = i * w + j;
            if i + 1 < ht {
                g.d1[k] = (v[k + w] - v[k]) / h;
            }
            if j + 1 < w {
                g.d2[k] = (v[k + 1] - v[k]) / h;
            }
        }
    }
    g
}

/// Backward-difference divergence, the negative adjoint of [`grad_forward`]:
/// `<grad u, p> = -<u, div p>` holds exactly for the cell sums.
pub fn div_backward(p: &VectorField) -> GridImage {
    let (w, ht, h) = (p.width, p.height, p.spacing);
    let mut out = vec![0.0; w * ht];
    for i in 0..ht {
        for j in 0..w {
            let k = i * w + j;
            let mut s = 0.0;
            if i + 1 < ht {
                s += p.d1[k];
            }
            if i > 0 {
                s -= p.d1[k - w];
            }
            if j + 1 < w {
                s += p.d2[k];
            }
            if j > 0 {
                s -= p.d2[k - 1];
            }
            out[k] = s / h;
        }
    }
    GridImage {
        width: w,
        height: ht,
        spacing: h,
        values: out,
    }
}

/// Isotropic total variation `sum_cells |grad u| h^2`.
pub fn total_variation(u: &GridImage) -> f64 {
    let g = grad_forward(u);
    let area = u.spacing * u.spacing;
    (0..g.d1.len()).map(|k| g.norm_at(k)).sum::<f64>() * area
}

/// Total variation restricted to the masked cells.
pub fn variation_on(u: &GridImage, region: &Mask) -> Result<f64> {
    u.same_grid(region.width, region.height)?;
    let g = grad_forward(u);
    let area = u.spacing * u.spacing;
    let mut s = 0.0;
    for (k, &inside) in region.cells.iter().enumerate() {
        if inside {
            s += g.norm_at(k);
        }
    }
    Ok(s * area)
}

/// Discrete perimeter: total variation of the indicator of `region`.
pub fn perimeter(region: &Mask, spacing: f64) -> Result<f64> {
    Ok(total_variation(&region.indicator(spacing)?))
}

/// Sum over cells of `u * v` without area weight.
pub fn inner(u: &GridImage, v: &GridImage) -> f64 {
    u.values.iter().zip(&v.values).map(|(a, b)| a * b).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn img(rows: &[&[f64]], h: f64) -> GridImage {
        let width = rows[0].len();
        let values = rows.iter().flat_map(|r| r.iter().copied()).collect();
        GridImage::new(width, rows.len(), h, values).unwrap()
    }

    #[test]
    fn rejects_bad_grids() {
        assert!(GridImage::new(1, 4, 1.0, vec![0.0; 4]).is_err());
        assert!(GridImage::new(2, 2, 0.0, vec![0.0; 4]).is_err());
        assert!(GridImage::new(2, 2, 1.0, vec![0.0, f64::NAN, 0.0, 0.0]).is_err());
        assert!(GridImage::new(2, 2, 1.0, vec![0.0; 3]).is_err());
    }

    #[test]
    fn constant_has_zero_gradient() {
        let u = GridImage::constant(5, 4, 0.1, 3.0).unwrap();
        let g = grad_forward(&u);
        assert!(g.d1.iter().chain(&g.d2).all(|&v| v == 0.0));
    }

    #[test]
    fn linear_ramp_along_columns() {
        let h = 0.25;
        let u = GridImage::from_fn(6, 5, h, |x| x[1] - 0.5 * h).unwrap();
        let g = grad_forward(&u);
        for i in 0..5 {
            for j in 0..5 {
                let k = i * 6 + j;
                assert!((g.d2[k] - 1.0).abs() < 1e-12);
                assert_eq!(g.d1[k], 0.0);
            }
        }
    }

    #[test]
    fn three_by_three_stencil() {
        // Columns 0,1,2 hold 0,1,0.
        let u = img(&[&[0., 1., 0.], &[0., 1., 0.], &[0., 1., 0.]], 1.0);
        let g = grad_forward(&u);
        assert_eq!(g.d2, vec![1., -1., 0., 1., -1., 0., 1., -1., 0.]);
        assert_eq!(g.d1, vec![0.0; 9]);
        // Two unit jumps per row, three rows, unit cells.
        assert_eq!(total_variation(&u), 6.0);
    }

    #[test]
    fn divergence_of_constant_field_lives_on_boundary() {
        let p = VectorField::new(4, 4, 1.0, vec![1.0; 16], vec![0.0; 16]).unwrap();
        let d = div_backward(&p);
        for i in 0..4 {
            for j in 0..4 {
                let expected = match i {
                    0 => 1.0,
                    3 => -1.0,
                    _ => 0.0,
                };
                assert_eq!(d.get(i, j), expected, "cell ({i},{j})");
            }
        }
        let z = div_backward(&VectorField::zeros(4, 4, 1.0));
        assert!(z.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn adjointness_on_random_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..10 {
            let (w, ht) = (rng.random_range(2..20), rng.random_range(2..20));
            let h = rng.random_range(0.01..1.0);
            let u = GridImage::new(w, ht, h, (0..w * ht).map(|_| rng.random_range(-1.0..1.0)).collect())
                .unwrap();
            let p = VectorField::new(
                w,
                ht,
                h,
                (0..w * ht).map(|_| rng.random_range(-1.0..1.0)).collect(),
                (0..w * ht).map(|_| rng.random_range(-1.0..1.0)).collect(),
            )
            .unwrap();
            let lhs = grad_forward(&u).dot(&p);
            let rhs = -inner(&u, &div_backward(&p));
            let scale = inner(&u, &u).sqrt() * p.dot(&p).sqrt() / h;
            assert!((lhs - rhs).abs() <= 1e-12 * scale, "{lhs} vs {rhs}");
        }
    }

    #[test]
    fn half_plane_has_unit_edge() {
        let n = 64;
        let h = 1.0 / n as f64;
        let u = GridImage::from_fn(n, n, h, |x| if x[1] > 0.5 { 1.0 } else { 0.0 }).unwrap();
        assert!((total_variation(&u) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn variation_on_masks() {
        let n = 32;
        let h = 1.0 / n as f64;
        let u = GridImage::from_fn(n, n, h, |x| if x[1] > 0.5 { 1.0 } else { 0.0 }).unwrap();
        let tv = total_variation(&u);
        assert_eq!(variation_on(&u, &Mask::full(n, n)).unwrap(), tv);
        assert_eq!(variation_on(&u, &Mask::empty(n, n)).unwrap(), 0.0);
        // Upper half of the rows holds half of the edge.
        let half = Mask::from_fn(n, n, h, |x| x[0] < 0.5);
        assert!((variation_on(&u, &half).unwrap() - 0.5).abs() < 1e-12);
        assert!(variation_on(&u, &Mask::full(n, n - 1)).is_err());
    }

    #[test]
    fn square_perimeter_edge_count() {
        // Side s = 16h. Forward differences put both components of the
        // outward jump into one corner cell, which contributes sqrt(2) h
        // instead of 2 h; every other boundary cell contributes h.
        let n = 64;
        let h = 1.0 / n as f64;
        let m = Mask::from_fn(n, n, h, |x| (0.25..0.5).contains(&x[0]) && (0.25..0.5).contains(&x[1]));
        let s = 16.0 * h;
        let expected = 4.0 * s - (2.0 - 2f64.sqrt()) * h;
        assert!((perimeter(&m, h).unwrap() - expected).abs() < 1e-12);
        assert_eq!(perimeter(&Mask::empty(n, n), h).unwrap(), 0.0);
    }

    #[test]
    fn disk_perimeter_is_self_consistent() {
        // Isotropic forward differences overestimate the length of curved
        // boundaries (about 17% for a pixelated circle). Only check that the
        // bias is stable under refinement.
        let r = 0.3;
        let per = |n: usize| {
            let h = 1.0 / n as f64;
            let m = Mask::from_fn(n, n, h, |x| (x - Point::new(0.5, 0.5)).norm() < r);
            perimeter(&m, h).unwrap()
        };
        let exact = 2.0 * std::f64::consts::PI * r;
        let (q1, q2) = (per(128) / exact, per(256) / exact);
        assert!((1.0..1.2).contains(&q1) && (1.0..1.2).contains(&q2));
        assert!((q1 - q2).abs() < 0.02);
    }

    #[test]
    fn rotation_round_trip() {
        let u = img(&[&[1., 2., 3.], &[4., 5., 6.]], 1.0);
        let r = u.rotate90();
        assert_eq!(r.dims(), (3, 2));
        assert_eq!(r.rotate90().rotate90().rotate90(), u);
    }

    #[test]
    fn bilinear_interpolation_reproduces_planes() {
        let h = 0.1;
        let u = GridImage::from_fn(10, 10, h, |x| 2.0 * x[0] - x[1] + 0.3).unwrap();
        let x = Point::new(0.37, 0.61);
        assert!((u.interpolate(x) - (2.0 * 0.37 - 0.61 + 0.3)).abs() < 1e-12);
    }
}
