//! Pushforwards `u o gamma^{-1}` of images under shift transformations:
//! grid resampling, quadrature of the regulariser of the pushforward,
//! the paired-transformation gap, the transport estimate, and the area
//! formulas for shifted graphs.
//!
//! Quadrature works in sheared frame coordinates `(a, tau)` with
//! `tau = t - f(a)`; the change of variables has unit Jacobian, and the
//! composite Gauss-Legendre rule is split wherever the integrand has a kink
//! (the graph, the bump anchor and its support edges).

use std::fmt;
use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

use crate::energies::{RegulariserSpec, PsiKind};
use crate::error::{invalid, Error, Result};
use crate::grid::{variation_on, GridImage, Mask};
use crate::quadrature::Rule1d;
use crate::shift::{comparison_constants, max_displacement, ComparisonConstants, LipschitzGraph, ShiftTransform, Transform, FD_STEP};
use crate::Point;

type ScalarField = Arc<dyn Fn(Point) -> f64 + Send + Sync>;
type GradField = Arc<dyn Fn(Point) -> Point + Send + Sync>;

/// Jump of an image across a graph: `lambda(x) = |u+ - u-|` at graph points.
#[derive(Clone)]
pub struct JumpDescription {
    pub graph: LipschitzGraph,
    pub lambda: ScalarField,
}

/// Analytically given image on the unit square: value, gradient of the
/// absolutely continuous part and an optional jump along a graph.
#[derive(Clone)]
pub struct FunctionalImage {
    value: ScalarField,
    gradient: GradField,
    analytic_gradient: bool,
    jump: Option<JumpDescription>,
}

impl fmt::Debug for FunctionalImage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FunctionalImage")
            .field("analytic_gradient", &self.analytic_gradient)
            .field("jump", &self.jump.as_ref().map(|j| j.graph.kind()))
            .finish()
    }
}

impl FunctionalImage {
    pub fn smooth(
        value: impl Fn(Point) -> f64 + Send + Sync + 'static,
        gradient: impl Fn(Point) -> Point + Send + Sync + 'static,
    ) -> Self {
        Self {
            value: Arc::new(value),
            gradient: Arc::new(gradient),
            analytic_gradient: true,
            jump: None,
        }
    }

    /// Smooth image whose gradient is taken by central differences.
    pub fn smooth_fd(value: impl Fn(Point) -> f64 + Send + Sync + 'static) -> Self {
        let value: ScalarField = Arc::new(value);
        let v = value.clone();
        Self {
            value,
            gradient: Arc::new(move |x| {
                let h = FD_STEP;
                Point::new(
                    (v(x + Point::new(h, 0.0)) - v(x - Point::new(h, 0.0))) / (2.0 * h),
                    (v(x + Point::new(0.0, h)) - v(x - Point::new(0.0, h))) / (2.0 * h),
                )
            }),
            analytic_gradient: false,
            jump: None,
        }
    }

    /// `g . x + c`.
    pub fn linear(g: Point, c: f64) -> Self {
        Self::smooth(move |x| g.dot(&x) + c, move |_| g)
    }

    /// `amp * exp(-|x - centre|^2 / (2 width^2))`.
    pub fn gaussian(centre: Point, width: f64, amp: f64) -> Self {
        let w2 = width * width;
        Self::smooth(
            move |x| amp * (-(x - centre).norm_squared() / (2.0 * w2)).exp(),
            move |x| {
                let d = x - centre;
                d * (-amp / w2 * (-d.norm_squared() / (2.0 * w2)).exp())
            },
        )
    }

    /// `upper` above the graph (along its normal axis), `lower` below.
    /// Outside the graph domain the side is decided by the nearest end of the
    /// domain.
    pub fn step(graph: LipschitzGraph, upper: f64, lower: f64) -> Self {
        let g = graph.clone();
        let (lo, hi) = g.domain();
        Self {
            value: Arc::new(move |x| {
                let (a, t) = g.to_frame(x);
                if t >= g.height(a.clamp(lo, hi)) {
                    upper
                } else {
                    lower
                }
            }),
            gradient: Arc::new(|_| Point::zeros()),
            analytic_gradient: true,
            jump: Some(JumpDescription {
                graph,
                lambda: Arc::new(move |_| (upper - lower).abs()),
            }),
        }
    }

    /// `inside` on the disk, `outside` elsewhere; the jump is described on
    /// the arc of the circle graph (which must be a circle graph of the same
    /// disk).
    pub fn disk(arc: LipschitzGraph, centre: Point, radius: f64, inside: f64, outside: f64) -> Self {
        Self {
            value: Arc::new(move |x| if (x - centre).norm() < radius { inside } else { outside }),
            gradient: Arc::new(|_| Point::zeros()),
            analytic_gradient: true,
            jump: Some(JumpDescription {
                graph: arc,
                lambda: Arc::new(move |_| (inside - outside).abs()),
            }),
        }
    }

    /// Adds a smooth image (which must carry no jump).
    pub fn plus(&self, smooth: &FunctionalImage) -> Result<Self> {
        if smooth.jump.is_some() {
            return Err(invalid("smooth", "summand must not carry a jump"));
        }
        let (v1, v2) = (self.value.clone(), smooth.value.clone());
        let (g1, g2) = (self.gradient.clone(), smooth.gradient.clone());
        Ok(Self {
            value: Arc::new(move |x| v1(x) + v2(x)),
            gradient: Arc::new(move |x| g1(x) + g2(x)),
            analytic_gradient: self.analytic_gradient && smooth.analytic_gradient,
            jump: self.jump.clone(),
        })
    }

    /// Multiplies values, gradient and jump by `c`.
    pub fn scaled(&self, c: f64) -> Self {
        let (v, g) = (self.value.clone(), self.gradient.clone());
        Self {
            value: Arc::new(move |x| c * v(x)),
            gradient: Arc::new(move |x| g(x) * c),
            analytic_gradient: self.analytic_gradient,
            jump: self.jump.as_ref().map(|j| {
                let l = j.lambda.clone();
                JumpDescription {
                    graph: j.graph.clone(),
                    lambda: Arc::new(move |x| c.abs() * l(x)),
                }
            }),
        }
    }

    pub fn value(&self, x: Point) -> f64 {
        (self.value)(x)
    }

    pub fn gradient(&self, x: Point) -> Point {
        (self.gradient)(x)
    }

    pub fn has_analytic_gradient(&self) -> bool {
        self.analytic_gradient
    }

    pub fn jump(&self) -> Option<&JumpDescription> {
        self.jump.as_ref()
    }

    /// Largest deviation between the gradient closure and central
    /// differences (step 1e-6) over `n` deterministic points of the unit
    /// square, skipping points within `1e-4` of the jump graph.
    pub fn gradient_fd_error(&self, n: usize) -> f64 {
        let mut worst: f64 = 0.0;
        for k in 0..n {
            let x = Point::new(
                0.05 + 0.9 * ((k as f64 + 0.5) * 0.618_033_988_749_895).fract(),
                0.05 + 0.9 * ((k as f64 + 0.5) * 0.754_877_666_246_693).fract(),
            );
            if let Some(j) = &self.jump {
                let (a, t) = j.graph.to_frame(x);
                let (lo, hi) = j.graph.domain();
                if (t - j.graph.height(a.clamp(lo, hi))).abs() < 1e-4 {
                    continue;
                }
            }
            let h = FD_STEP;
            let fd = Point::new(
                (self.value(x + Point::new(h, 0.0)) - self.value(x - Point::new(h, 0.0))) / (2.0 * h),
                (self.value(x + Point::new(0.0, h)) - self.value(x - Point::new(0.0, h))) / (2.0 * h),
            );
            worst = worst.max((fd - self.gradient(x)).norm());
        }
        worst
    }

    /// Samples the image at the cell centres of an `n x n` grid on the unit square.
    pub fn rasterise(&self, n: usize) -> Result<GridImage> {
        GridImage::from_fn(n, n, 1.0 / n as f64, |x| self.value(x))
    }
}

/// Composite Gauss-Legendre resolution: each sub-interval between
/// breakpoints gets `panels` panels of an `order`-point rule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct QuadratureSpec {
    pub panels: usize,
    pub order: usize,
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        Self { panels: 16, order: 8 }
    }
}

impl QuadratureSpec {
    pub fn halved(&self) -> Self {
        Self {
            panels: (self.panels / 2).max(1),
            order: self.order,
        }
    }
}

fn sum_ordered(parts: Vec<f64>) -> f64 {
    parts.into_iter().sum()
}

/// Integral over the tube `{|a - a0| < r, |tau| < 3r}` of a shift, in
/// sheared frame coordinates. Outside it the shift is the identity.
pub fn tube_integral(t: &ShiftTransform, q: QuadratureSpec, f: impl Fn(Point) -> f64 + Sync) -> f64 {
    let (a0, r, s) = (t.a0(), t.r(), t.s());
    let mut a_breaks = vec![a0 - r, a0 + r];
    a_breaks.extend(t.kinks());
    let ra = Rule1d::composite(&a_breaks, q.panels, q.order);
    let rt = Rule1d::composite(&[-s, 0.0, s], q.panels, q.order);
    let g = t.graph();
    let parts: Vec<f64> = ra
        .nodes
        .par_iter()
        .zip(&ra.weights)
        .map(|(&a, &wa)| {
            let f0 = g.height(a);
            wa * rt.integrate(|tau| f(g.from_frame(a, f0 + tau)))
        })
        .collect();
    sum_ordered(parts)
}

/// Integral over the box `U_r` of a shift, in (unsheared) frame coordinates.
pub fn box_integral(t: &ShiftTransform, q: QuadratureSpec, f: impl Fn(Point) -> f64 + Sync) -> f64 {
    let ((alo, ahi), (tlo, thi)) = t.tube_box();
    let ra = Rule1d::composite(&[alo, t.a0(), ahi], q.panels, q.order);
    let rt = Rule1d::composite(&[tlo, thi], 2 * q.panels, q.order);
    let g = t.graph();
    let parts: Vec<f64> = ra
        .nodes
        .par_iter()
        .zip(&ra.weights)
        .map(|(&a, &wa)| wa * rt.integrate(|tt| f(g.from_frame(a, tt))))
        .collect();
    sum_ordered(parts)
}

/// Integral over the unit square.
pub fn square_integral(q: QuadratureSpec, f: impl Fn(Point) -> f64 + Sync) -> f64 {
    let r = Rule1d::composite(&[0.0, 1.0], 2 * q.panels, q.order);
    let parts: Vec<f64> = r
        .nodes
        .par_iter()
        .zip(&r.weights)
        .map(|(&x, &wx)| wx * r.integrate(|y| f(Point::new(x, y))))
        .collect();
    sum_ordered(parts)
}

fn check_box_in_square(t: &ShiftTransform) -> Result<()> {
    let ((alo, ahi), (tlo, thi)) = t.tube_box();
    let g = t.graph();
    for (a, tt) in [(alo, tlo), (alo, thi), (ahi, tlo), (ahi, thi)] {
        let x = g.from_frame(a, tt);
        if !(0.0..=1.0).contains(&x[0]) || !(0.0..=1.0).contains(&x[1]) {
            return Err(invalid("transform", format!("U_r corner {x:?} leaves the unit square")));
        }
    }
    Ok(())
}

/// `|D^a (u o gamma^{-1})|` split at `U_r`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct QuadratureTv {
    /// `|D^a u|(Omega \ U_r)` (unchanged by the shift).
    pub outside: f64,
    /// `int_{U_r} |W grad u|`.
    pub inside: f64,
}

impl QuadratureTv {
    pub fn total(&self) -> f64 {
        self.outside + self.inside
    }
}

/// `|W g| - |g|` without cancellation.
#[inline]
fn norm_change(w: &crate::Mat2, g: Point) -> f64 {
    let wg = w * g;
    let den = wg.norm() + g.norm();
    if den == 0.0 {
        0.0
    } else {
        (wg - g).dot(&(wg + g)) / den
    }
}

pub fn tv_pushforward_quadrature(u: &FunctionalImage, t: &ShiftTransform, q: QuadratureSpec) -> Result<QuadratureTv> {
    if u.jump.is_some() {
        return Err(Error::JumpNotSupported);
    }
    check_box_in_square(t)?;
    let total = square_integral(q, |x| u.gradient(x).norm());
    let in_box = box_integral(t, q, |x| u.gradient(x).norm());
    let change = tube_integral(t, q, |x| norm_change(&t.lipjac(x), u.gradient(x)));
    Ok(QuadratureTv {
        outside: total - in_box,
        inside: in_box + change,
    })
}

/// `int lambda(g(a)) sqrt(1 + (f' + H')^2) da` over the graph domain, with
/// `H` the shift profile of `perturbation` if given.
pub fn weighted_graph_area(
    graph: &LipschitzGraph,
    lambda: impl Fn(Point) -> f64 + Sync,
    perturbation: Option<&ShiftTransform>,
    q: QuadratureSpec,
) -> f64 {
    let (lo, hi) = graph.domain();
    weighted_graph_area_on(graph, lambda, perturbation, lo, hi, q)
}

/// As [`weighted_graph_area`] over the tangent interval `[lo, hi]`.
pub fn weighted_graph_area_on(
    graph: &LipschitzGraph,
    lambda: impl Fn(Point) -> f64 + Sync,
    perturbation: Option<&ShiftTransform>,
    lo: f64,
    hi: f64,
    q: QuadratureSpec,
) -> f64 {
    let mut breaks = vec![lo, hi];
    breaks.extend(graph.kinks().iter().copied().filter(|&k| k > lo && k < hi));
    if let Some(t) = perturbation {
        breaks.extend(t.kinks().into_iter().filter(|&k| k > lo && k < hi));
    }
    let rule = Rule1d::composite(&breaks, q.panels, q.order);
    rule.integrate(|a| {
        let dh = perturbation.map_or(0.0, |t| t.shift(a).1);
        lambda(graph.point(a)) * (1.0 + (graph.slope(a) + dh).powi(2)).sqrt()
    })
}

/// `int lambda (sqrt(1 + (f' + H')^2) - sqrt(1 + f'^2)) da` over the bump
/// support, evaluated without cancellation.
pub fn graph_area_change(graph: &LipschitzGraph, lambda: impl Fn(Point) -> f64 + Sync, t: &ShiftTransform, q: QuadratureSpec) -> f64 {
    let (a0, r) = (t.a0(), t.r());
    let mut breaks = vec![a0 - r, a0 + r];
    breaks.extend(t.kinks());
    let rule = Rule1d::composite(&breaks, q.panels, q.order);
    rule.integrate(|a| {
        let (fp, dh) = (graph.slope(a), t.shift(a).1);
        let s0 = (1.0 + fp * fp).sqrt();
        let s1 = (1.0 + (fp + dh).powi(2)).sqrt();
        lambda(graph.point(a)) * dh * (2.0 * fp + dh) / (s0 + s1)
    })
}

/// `R(u o gamma^{-1}) - R(u)` for `R = alpha TV_psi`: the absolutely
/// continuous change over the tube plus `psi_inf` times the change of the
/// weighted jump length.
pub fn regulariser_change(u: &FunctionalImage, t: &ShiftTransform, reg: &RegulariserSpec, q: QuadratureSpec) -> Result<f64> {
    reg.require_convex()?;
    Ok(reg.alpha * (smooth_change(u, t, reg, q) + jump_change(u, t, reg, q)?))
}

fn smooth_change(u: &FunctionalImage, t: &ShiftTransform, reg: &RegulariserSpec, q: QuadratureSpec) -> f64 {
    let psi = &reg.psi;
    tube_integral(t, q, |x| {
        let g = u.gradient(x);
        let w = t.lipjac(x);
        match psi.kind {
            PsiKind::Tv => norm_change(&w, g),
            _ => {
                let j = t.jacobian_det(x);
                psi.value((w * g).norm() / j) * j - psi.value(g.norm())
            }
        }
    })
}

fn jump_change(u: &FunctionalImage, t: &ShiftTransform, reg: &RegulariserSpec, q: QuadratureSpec) -> Result<f64> {
    let Some(j) = &u.jump else { return Ok(0.0) };
    same_graph(&j.graph, t.graph())?;
    Ok(reg.psi.psi_inf * graph_area_change(&j.graph, |x| (j.lambda)(x), t, q))
}

fn same_graph(a: &LipschitzGraph, b: &LipschitzGraph) -> Result<()> {
    if a.kind() != b.kind() || (a.z() - b.z()).norm() > 1e-15 || a.domain() != b.domain() {
        return Err(invalid(
            "transform",
            "shift must be built on the jump graph of the image",
        ));
    }
    Ok(())
}

/// `|Du|(U_r)`: absolutely continuous part over the box plus the weighted
/// jump length over the bump support.
pub fn variation_on_tube(u: &FunctionalImage, t: &ShiftTransform, q: QuadratureSpec) -> Result<f64> {
    let ac = box_integral(t, q, |x| u.gradient(x).norm());
    let jump = match &u.jump {
        None => 0.0,
        Some(j) => {
            same_graph(&j.graph, t.graph())?;
            weighted_graph_area_on(&j.graph, |x| (j.lambda)(x), None, t.a0() - t.r(), t.a0() + t.r(), q)
        }
    };
    Ok(ac + jump)
}

/// Result of the paired-transformation gap test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DoubleLipGap {
    /// `R(u_{gamma1}) + R(u_{gamma2}) - 2 R(u)`.
    pub lhs: f64,
    /// `|Du|(U_r)`.
    pub du: f64,
    pub constants: ComparisonConstants,
    /// `alpha G |Du|(U_r)`.
    pub g_bound: f64,
    /// `alpha T |Du|(U_r)`.
    pub t_bound: f64,
}

impl DoubleLipGap {
    pub fn g_ratio(&self) -> f64 {
        ratio(self.lhs, self.g_bound)
    }

    pub fn t_ratio(&self) -> f64 {
        ratio(self.lhs, self.t_bound)
    }

    /// Whether `lhs` exceeds the `G` bound by more than the relative slack.
    pub fn violates_g(&self, slack: f64) -> bool {
        self.lhs > self.g_bound * (1.0 + slack) + 1e-300
    }
}

fn ratio(a: f64, b: f64) -> f64 {
    if b == 0.0 {
        if a.abs() <= 1e-15 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        a / b
    }
}

/// Density used for the comparison constants inside [`double_lip_gap`].
pub const GAP_DENSITY: usize = 64;

pub fn double_lip_gap(
    u: &FunctionalImage,
    t1: &Transform,
    t2: &Transform,
    reg: &RegulariserSpec,
    q: QuadratureSpec,
) -> Result<DoubleLipGap> {
    reg.require_convex()?;
    let shifts: Vec<&ShiftTransform> = [t1, t2].iter().filter_map(|t| t.as_shift()).collect();
    let Some(&first) = shifts.first() else {
        return Ok(DoubleLipGap {
            lhs: 0.0,
            du: 0.0,
            constants: ComparisonConstants::zero(),
            g_bound: 0.0,
            t_bound: 0.0,
        });
    };
    if let Some(&second) = shifts.get(1) {
        same_graph(first.graph(), second.graph())?;
        if first.a0() != second.a0() || first.r() != second.r() {
            return Err(invalid("transforms", "pair must share the tube U_r"));
        }
    }
    let psi = &reg.psi;
    // Both maps are evaluated at the same nodes so the O(rho^2) sum is
    // formed pointwise.
    let smooth = tube_integral(first, q, |x| {
        let g = u.gradient(x);
        shifts
            .iter()
            .map(|t| {
                let w = t.lipjac(x);
                match psi.kind {
                    PsiKind::Tv => norm_change(&w, g),
                    _ => {
                        let j = t.jacobian_det(x);
                        psi.value((w * g).norm() / j) * j - psi.value(g.norm())
                    }
                }
            })
            .sum()
    });
    let mut jump = 0.0;
    for t in &shifts {
        jump += jump_change(u, t, reg, q)?;
    }
    let lhs = reg.alpha * (smooth + jump);
    let du = variation_on_tube(u, first, q)?;
    let constants = comparison_constants(t1, t2, GAP_DENSITY);
    Ok(DoubleLipGap {
        lhs,
        du,
        constants,
        g_bound: reg.alpha * constants.g * du,
        t_bound: reg.alpha * constants.t * du,
    })
}

/// `u o gamma^{-1}` on the grid. For axis-aligned normal axes the value is
/// interpolated linearly along that axis only (the shift moves points along
/// it); otherwise bilinearly.
pub fn pushforward_grid(u: &GridImage, t: &ShiftTransform) -> GridImage {
    let z = t.graph().z();
    let h = u.spacing();
    let (ht, w) = u.dims();
    let along = if z[1] == 0.0 {
        Some(0)
    } else if z[0] == 0.0 {
        Some(1)
    } else {
        None
    };
    let mut out = Vec::with_capacity(w * ht);
    for i in 0..ht {
        for j in 0..w {
            let y = u.centre(i, j);
            let x = t.inverse(y);
            if x == y {
                out.push(u.get(i, j));
                continue;
            }
            let v = match along {
                Some(0) => {
                    let fi = (x[0] / h - 0.5).clamp(0.0, (ht - 1) as f64);
                    let i0 = (fi.floor() as usize).min(ht - 2);
                    let s = fi - i0 as f64;
                    (1.0 - s) * u.get(i0, j) + s * u.get(i0 + 1, j)
                }
                Some(_) => {
                    let fj = (x[1] / h - 0.5).clamp(0.0, (w - 1) as f64);
                    let j0 = (fj.floor() as usize).min(w - 2);
                    let s = fj - j0 as f64;
                    (1.0 - s) * u.get(i, j0) + s * u.get(i, j0 + 1)
                }
                None => u.interpolate(x),
            };
            out.push(v);
        }
    }
    u.with_values(out)
}

/// Cells whose centre lies in `U_r`.
pub fn tube_mask(u: &GridImage, t: &ShiftTransform) -> Mask {
    Mask::from_fn(u.width(), u.height(), u.spacing(), |x| t.in_tube_box(x))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TransportCheck {
    /// `sum |u(gamma(x)) - u(x)| h^2`.
    pub integral: f64,
    /// `M |Du|(U_r)`.
    pub bound: f64,
}

pub fn transport_check(u: &GridImage, t: &ShiftTransform) -> Result<TransportCheck> {
    let h2 = u.spacing() * u.spacing();
    let (ht, w) = u.dims();
    let mut integral = 0.0;
    for i in 0..ht {
        for j in 0..w {
            let x = u.centre(i, j);
            let y = t.apply(x);
            if y != x {
                integral += (u.interpolate(y) - u.get(i, j)).abs() * h2;
            }
        }
    }
    let bound = max_displacement(t).analytic * variation_on(u, &tube_mask(u, t))?;
    Ok(TransportCheck { integral, bound })
}

/// Continuum counterpart of [`transport_check`] by quadrature over the tube
/// box: `int |u(gamma(x)) - u(x)| dx` against `M int |grad u| dx`.
pub fn transport_quadrature(u: &FunctionalImage, t: &ShiftTransform, q: QuadratureSpec) -> Result<TransportCheck> {
    if u.jump.is_some() {
        return Err(Error::JumpNotSupported);
    }
    let integral = box_integral(t, q, |x| (u.value(t.apply(x)) - u.value(x)).abs());
    let bound = max_displacement(t).analytic * box_integral(t, q, |x| u.gradient(x).norm());
    Ok(TransportCheck { integral, bound })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WedgeArea {
    /// `|rho| int h_r = |rho| r^2 I_1`.
    pub analytic: f64,
    /// Area between the graph and its shifted image by rasterisation.
    pub pixel_count: f64,
}

/// Area between `Gamma` and `gamma(Gamma)`, analytically and by counting the
/// cells of an `n x n` raster of the bounding box of the wedge.
pub fn wedge_area(t: &ShiftTransform, n: usize) -> WedgeArea {
    let analytic = t.rho().abs() * t.r() * t.r() * t.bump().integral();
    if t.rho() == 0.0 {
        return WedgeArea {
            analytic: 0.0,
            pixel_count: 0.0,
        };
    }
    let (a0, r) = (t.a0(), t.r());
    let height = t.rho().abs() * r * t.bump().sup();
    let (da, dt) = (2.0 * r / n as f64, height / n as f64);
    let mut count = 0usize;
    for ia in 0..n {
        let a = a0 - r + (ia as f64 + 0.5) * da;
        let hh = t.shift(a).0;
        for it in 0..n {
            // Offset from the graph, on the side the shift moves towards.
            let tau = (it as f64 + 0.5) * dt * t.rho().signum();
            if (tau > 0.0 && tau < hh) || (tau < 0.0 && tau > hh) {
                count += 1;
            }
        }
    }
    WedgeArea {
        analytic,
        pixel_count: count as f64 * da * dt,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::total_variation;
    use crate::shift::Bump;

    fn flat() -> LipschitzGraph {
        LipschitzGraph::flat(Point::new(0.0, 1.0), 0.5, 0.5, 0.4).unwrap()
    }

    fn shift(rho: f64) -> ShiftTransform {
        ShiftTransform::new(flat(), 0.5, 0.1, rho, Bump::Standard).unwrap()
    }

    #[test]
    fn gradient_closures_agree_with_values() {
        let u = FunctionalImage::gaussian(Point::new(0.4, 0.6), 0.2, 1.5);
        assert!(u.gradient_fd_error(100) < 1e-4);
        let v = FunctionalImage::smooth_fd(|x| (x[0] * 3.0).sin() * x[1]);
        assert!(!v.has_analytic_gradient());
        let s = FunctionalImage::step(flat(), 1.0, 0.0);
        assert!(s.gradient_fd_error(100) < 1e-4);
    }

    #[test]
    fn identity_shift_changes_nothing() {
        let u = FunctionalImage::gaussian(Point::new(0.5, 0.5), 0.15, 1.0);
        let q = QuadratureSpec::default();
        let t0 = shift(0.0);
        let tv = tv_pushforward_quadrature(&u, &t0, q).unwrap();
        let in_box = box_integral(&t0, q, |x| u.gradient(x).norm());
        assert!((tv.inside - in_box).abs() < 1e-15);
        let reg = RegulariserSpec::tv(1.0).unwrap();
        let gap = double_lip_gap(&u, &Transform::Identity, &Transform::Identity, &reg, q).unwrap();
        assert_eq!(gap.lhs, 0.0);
    }

    #[test]
    fn linear_image_under_identity() {
        let g = Point::new(0.3, -0.4);
        let u = FunctionalImage::linear(g, 0.1);
        let t = shift(0.0);
        let tv = tv_pushforward_quadrature(&u, &t, QuadratureSpec::default()).unwrap();
        let area = 2.0 * 0.1 * 2.0 * 3.0 * 0.1;
        assert!((tv.inside - 0.5 * area).abs() < 1e-14);
        assert!((tv.total() - 0.5).abs() < 1e-13);
        assert!(matches!(
            tv_pushforward_quadrature(&FunctionalImage::step(flat(), 1.0, 0.0), &t, QuadratureSpec::default()),
            Err(Error::JumpNotSupported)
        ));
    }

    #[test]
    fn quadrature_tv_matches_grid_pushforward() {
        let u = FunctionalImage::gaussian(Point::new(0.5, 0.47), 0.08, 1.0);
        let t = shift(0.5);
        let exact = tv_pushforward_quadrature(&u, &t, QuadratureSpec::default()).unwrap().total();
        let err = |n: usize| {
            let g = u.rasterise(n).unwrap();
            (total_variation(&pushforward_grid(&g, &t)) - exact).abs()
        };
        let (e1, e2) = (err(256), err(512));
        assert!(e1 < 0.02 * exact, "{e1} vs {exact}");
        assert!(e2 < e1);
    }

    #[test]
    fn pushforward_moves_flat_interface() {
        let n = 100;
        let h = 1.0 / n as f64;
        // Lower side (x2 < 0.5) is 1.
        let u = GridImage::from_fn(n, n, h, |x| if x[1] < 0.5 { 1.0 } else { 0.0 }).unwrap();
        let t = shift(0.5);
        let p = pushforward_grid(&u, &t);
        let unchanged = pushforward_grid(&u, &shift(0.0));
        assert_eq!(unchanged, u);
        for i in 0..n {
            let a = (i as f64 + 0.5) * h;
            let top = 0.5 + t.shift(a).0;
            for j in 0..n {
                let x2 = (j as f64 + 0.5) * h;
                let v = p.get(i, j);
                if x2 < top - h {
                    assert!((v - 1.0).abs() < 1e-12, "({i},{j}) {v}");
                } else if x2 > top + h {
                    assert!(v.abs() < 1e-12, "({i},{j}) {v}");
                }
            }
        }
    }

    #[test]
    fn graph_areas() {
        let q = QuadratureSpec::default();
        let f = flat();
        assert!((weighted_graph_area(&f, |_| 1.0, None, q) - 0.8).abs() < 1e-14);
        let line = LipschitzGraph::line(Point::new(0.0, 1.0), 1.0, 0.0, 0.5, 0.5).unwrap();
        assert!((weighted_graph_area(&line, |_| 1.0, None, q) - 2f64.sqrt()).abs() < 1e-14);
        let (rad, w) = (0.3, 0.2);
        let arc = LipschitzGraph::circle(Point::new(0.0, 1.0), Point::new(0.5, 0.4), rad, w).unwrap();
        let exact = 2.0 * rad * (w / rad).asin();
        assert!((weighted_graph_area(&arc, |_| 1.0, None, q) - exact).abs() < 1e-6);
        // Shifted flat graph: length 2r sqrt(1 + rho^2) over the bump support.
        let t = shift(0.3);
        let l = weighted_graph_area_on(&f, |_| 1.0, Some(&t), 0.4, 0.6, q);
        assert!((l - 0.2 * (1.09f64).sqrt()).abs() < 1e-14);
        let dl = graph_area_change(&f, |_| 1.0, &t, q);
        assert!((dl - 0.2 * ((1.09f64).sqrt() - 1.0)).abs() < 1e-15);
    }

    #[test]
    fn wedge_area_standard_bump() {
        let w = wedge_area(&shift(0.25), 512);
        assert!((w.analytic - 0.25 * 0.01).abs() < 1e-16);
        assert!((w.pixel_count / w.analytic - 1.0).abs() < 0.02);
        let w0 = wedge_area(&shift(0.0), 512);
        assert_eq!((w0.analytic, w0.pixel_count), (0.0, 0.0));
        let wn = wedge_area(&shift(-0.25), 512);
        assert!((wn.pixel_count / wn.analytic - 1.0).abs() < 0.02);
    }

    #[test]
    fn transport_trivial_cases() {
        let n = 64;
        let u = GridImage::constant(n, n, 1.0 / n as f64, 2.0).unwrap();
        let c = transport_check(&u, &shift(0.3)).unwrap();
        assert_eq!(c.integral, 0.0);
        assert!(c.bound >= 0.0);
        let v = FunctionalImage::gaussian(Point::new(0.5, 0.5), 0.1, 1.0).rasterise(n).unwrap();
        let z = transport_check(&v, &shift(0.0)).unwrap();
        assert_eq!((z.integral, z.bound), (0.0, 0.0));
    }

    #[test]
    fn flat_jump_gap_is_attained_by_g() {
        // Piecewise constant step: the gap is the length change of the two
        // shifted interfaces, and G is attained at the interface.
        let u = FunctionalImage::step(flat(), 0.0, 2.0);
        let reg = RegulariserSpec::tv(0.7).unwrap();
        let q = QuadratureSpec::default();
        for rho in [0.1, 0.01] {
            let p = Transform::Shift(shift(rho));
            let m = Transform::Shift(shift(-rho));
            let gap = double_lip_gap(&u, &p, &m, &reg, q).unwrap();
            let expected = 0.7 * 2.0 * 2.0 * 0.2 * rho * rho / ((1.0 + rho * rho).sqrt() + 1.0);
            assert!((gap.lhs - expected).abs() <= 1e-12 * expected, "{} vs {expected}", gap.lhs);
            assert!((gap.du - 0.4).abs() < 1e-14);
            assert!(!gap.violates_g(1e-6), "{} > {}", gap.lhs, gap.g_bound);
        }
    }
}
