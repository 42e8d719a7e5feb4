//! Lipschitz graphs in the plane and the shift transformation that slides
//! a graph by `rho * h_r` along its normal axis inside a tube, together with
//! its closed-form inverse, derivative and the pairwise comparison
//! constants `(G, J, D1, D2, T)`.
//!
//! Frame coordinates for a graph with normal axis `z` use the tangent
//! `e = (z.y, -z.x)`: a point is `x = a e + t z`, and the graph is
//! `t = f(a)` for `a` in the interval `V`. `tau = t - f(a)` is the signed
//! offset from the graph; `tau < 0` is the lower side.
//!
//! Only the planar case is implemented.

use std::fmt;
use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::energies::biestim_upper;
use crate::linalg::{pair_norm_sup, spectral_norm};
use crate::{Mat2, Point};

/// Step used for central differences when no derivative closure is given.
pub const FD_STEP: f64 = 1e-6;

type RealFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum GraphKind {
    Flat { offset: f64 },
    Line { slope: f64, intercept: f64 },
    /// Upper arc (along `z`) of the circle with this world centre and radius.
    Circle { centre: [f64; 2], radius: f64 },
    Custom,
}

/// `{a e + f(a) z : a in (centre - half_width, centre + half_width)}`.
#[derive(Clone)]
pub struct LipschitzGraph {
    z: Point,
    e: Point,
    f: RealFn,
    df: Option<RealFn>,
    lip: f64,
    centre: f64,
    half_width: f64,
    kinks: Vec<f64>,
    kind: GraphKind,
}

impl fmt::Debug for LipschitzGraph {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LipschitzGraph")
            .field("z", &self.z)
            .field("kind", &self.kind)
            .field("lip", &self.lip)
            .field("domain", &(self.centre - self.half_width, self.centre + self.half_width))
            .finish()
    }
}

fn unit_axis(z: Point) -> Result<Point> {
    let n = z.norm();
    if !(n > 0.0 && n.is_finite()) {
        return Err(invalid("z", "normal axis must be a nonzero finite vector"));
    }
    if (n - 1.0).abs() > 1e-12 {
        return Err(invalid("z", format!("normal axis must have unit length, got {n}")));
    }
    Ok(z)
}

impl LipschitzGraph {
    /// General graph from closures. `df` may be omitted, in which case the
    /// derivative is taken by central differences with step [`FD_STEP`].
    pub fn new(
        z: Point,
        f: impl Fn(f64) -> f64 + Send + Sync + 'static,
        df: Option<RealFn>,
        lip: f64,
        centre: f64,
        half_width: f64,
    ) -> Result<Self> {
        let z = unit_axis(z)?;
        if !(half_width > 0.0) || !(lip >= 0.0) {
            return Err(invalid("graph", "need half_width > 0 and lip >= 0"));
        }
        Ok(Self {
            z,
            e: Point::new(z[1], -z[0]),
            f: Arc::new(f),
            df,
            lip,
            centre,
            half_width,
            kinks: Vec::new(),
            kind: GraphKind::Custom,
        })
    }

    /// `t = offset` over `a in (centre - half_width, centre + half_width)`.
    pub fn flat(z: Point, offset: f64, centre: f64, half_width: f64) -> Result<Self> {
        let mut g = Self::new(z, move |_| offset, Some(Arc::new(|_| 0.0)), 0.0, centre, half_width)?;
        g.kind = GraphKind::Flat { offset };
        Ok(g)
    }

    /// `t = intercept + slope * a`.
    pub fn line(z: Point, slope: f64, intercept: f64, centre: f64, half_width: f64) -> Result<Self> {
        let mut g = Self::new(
            z,
            move |a| intercept + slope * a,
            Some(Arc::new(move |_| slope)),
            slope.abs(),
            centre,
            half_width,
        )?;
        g.kind = GraphKind::Line { slope, intercept };
        Ok(g)
    }

    /// Upper arc (in direction `z`) of a circle, over the part of the arc whose
    /// tangent coordinate is within `half_width < radius` of the centre.
    pub fn circle(z: Point, centre: Point, radius: f64, half_width: f64) -> Result<Self> {
        if !(radius > 0.0 && half_width > 0.0 && half_width < radius) {
            return Err(invalid("circle", "need 0 < half_width < radius"));
        }
        let z = unit_axis(z)?;
        let e = Point::new(z[1], -z[0]);
        let (ca, ct) = (centre.dot(&e), centre.dot(&z));
        let r2 = radius * radius;
        let lip = half_width / (r2 - half_width * half_width).sqrt();
        let mut g = Self::new(
            z,
            move |a| ct + (r2 - (a - ca) * (a - ca)).max(0.0).sqrt(),
            Some(Arc::new(move |a| -(a - ca) / (r2 - (a - ca) * (a - ca)).sqrt())),
            lip,
            ca,
            half_width,
        )?;
        g.kind = GraphKind::Circle {
            centre: [centre[0], centre[1]],
            radius,
        };
        Ok(g)
    }

    /// Declares tangent coordinates where `f` is not differentiable.
    pub fn with_kinks(mut self, kinks: Vec<f64>) -> Self {
        self.kinks = kinks;
        self
    }

    pub fn z(&self) -> Point {
        self.z
    }

    pub fn tangent(&self) -> Point {
        self.e
    }

    pub fn kind(&self) -> GraphKind {
        self.kind
    }

    pub fn lip(&self) -> f64 {
        self.lip
    }

    pub fn kinks(&self) -> &[f64] {
        &self.kinks
    }

    /// `(lo, hi)` of the tangent-coordinate domain.
    pub fn domain(&self) -> (f64, f64) {
        (self.centre - self.half_width, self.centre + self.half_width)
    }

    pub fn height(&self, a: f64) -> f64 {
        (self.f)(a)
    }

    pub fn slope(&self, a: f64) -> f64 {
        match &self.df {
            Some(df) => df(a),
            None => ((self.f)(a + FD_STEP) - (self.f)(a - FD_STEP)) / (2.0 * FD_STEP),
        }
    }

    /// World point `g(a) = a e + f(a) z`.
    pub fn point(&self, a: f64) -> Point {
        self.e * a + self.z * self.height(a)
    }

    /// World point to frame coordinates `(a, t)`.
    #[inline]
    pub fn to_frame(&self, x: Point) -> (f64, f64) {
        (x.dot(&self.e), x.dot(&self.z))
    }

    #[inline]
    pub fn from_frame(&self, a: f64, t: f64) -> Point {
        self.e * a + self.z * t
    }

    /// Rotation taking frame vectors `(da, dt)` to world vectors.
    pub fn frame_matrix(&self) -> Mat2 {
        Mat2::from_columns(&[self.e, self.z])
    }

    /// Largest observed `|f(a) - f(b)| / |a - b|` over `pairs` sampled pairs,
    /// and whether it stays within the declared bound.
    pub fn check_lipschitz(&self, pairs: usize) -> (f64, bool) {
        let (lo, hi) = self.domain();
        let mut worst: f64 = 0.0;
        for k in 0..pairs {
            // Deterministic low-discrepancy pairs.
            let u = ((k as f64 + 0.5) * 0.618_033_988_749_895).fract();
            let v = ((k as f64 + 0.5) * 0.414_213_562_373_095).fract();
            let (a, b) = (lo + (hi - lo) * u, lo + (hi - lo) * v);
            if (a - b).abs() > 1e-12 {
                worst = worst.max((self.height(a) - self.height(b)).abs() / (a - b).abs());
            }
        }
        (worst, worst <= self.lip * (1.0 + 1e-9) + 1e-12)
    }
}

/// Profile `h-bar` of the shift, supported in `[-1, 1]` with `|h-bar| <= 1`.
#[derive(Clone)]
pub enum Bump {
    /// `max(0, 1 - |v|)`.
    Standard,
    /// `(1 + cos(pi v)) / 2` on `[-1, 1]`.
    Cosine,
    Custom {
        value: RealFn,
        derivative: Option<RealFn>,
        integral: f64,
    },
}

impl fmt::Debug for Bump {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Bump::Standard => write!(f, "Standard"),
            Bump::Cosine => write!(f, "Cosine"),
            Bump::Custom { .. } => write!(f, "Custom"),
        }
    }
}

pub fn standard_bump(v: f64) -> f64 {
    (1.0 - v.abs()).max(0.0)
}

impl Bump {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "standard" => Ok(Bump::Standard),
            "cosine" => Ok(Bump::Cosine),
            _ => Err(Error::Unknown {
                what: "bump",
                name: name.into(),
            }),
        }
    }

    pub fn value(&self, v: f64) -> f64 {
        match self {
            Bump::Standard => standard_bump(v),
            Bump::Cosine => {
                if v.abs() >= 1.0 {
                    0.0
                } else {
                    0.5 * (1.0 + (std::f64::consts::PI * v).cos())
                }
            }
            Bump::Custom { value, .. } => {
                if v.abs() >= 1.0 {
                    0.0
                } else {
                    value(v)
                }
            }
        }
    }

    /// Derivative; at the kinks of the standard bump the value 0 is used.
    pub fn derivative(&self, v: f64) -> f64 {
        match self {
            Bump::Standard => {
                if v == 0.0 || v.abs() >= 1.0 {
                    0.0
                } else {
                    -v.signum()
                }
            }
            Bump::Cosine => {
                if v.abs() >= 1.0 {
                    0.0
                } else {
                    -0.5 * std::f64::consts::PI * (std::f64::consts::PI * v).sin()
                }
            }
            Bump::Custom { derivative, .. } => {
                if v.abs() >= 1.0 {
                    0.0
                } else if let Some(d) = derivative {
                    d(v)
                } else {
                    (self.value(v + FD_STEP) - self.value(v - FD_STEP)) / (2.0 * FD_STEP)
                }
            }
        }
    }

    /// `sup |h-bar|`.
    pub fn sup(&self) -> f64 {
        match self {
            Bump::Standard | Bump::Cosine => 1.0,
            Bump::Custom { .. } => {
                (0..=20_000).map(|k| self.value(-1.0 + k as f64 * 1e-4).abs()).fold(0.0, f64::max)
            }
        }
    }

    /// `I_1 = integral of h-bar over [-1, 1]`.
    pub fn integral(&self) -> f64 {
        match self {
            Bump::Standard | Bump::Cosine => 1.0,
            Bump::Custom { integral, .. } => *integral,
        }
    }

    /// Points of `[-1, 1]` where the profile is not smooth.
    pub fn kinks(&self) -> &'static [f64] {
        match self {
            Bump::Standard => &[-1.0, 0.0, 1.0],
            _ => &[-1.0, 1.0],
        }
    }
}

/// Which side of the graph a frame offset belongs to; the interface
/// `tau = 0` is assigned to the lower branch for derivatives.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Branch {
    Lower,
    Upper,
    Outside,
}

/// Shift `gamma_{rho, h, r}` anchored at `x0 = g(a0)`: inside the tube
/// `|tau| < s = 3r` the normal coordinate moves by a piecewise-linear
/// interpolation of `H(a) = rho r h-bar((a - a0)/r)`.
#[derive(Debug, Clone)]
pub struct ShiftTransform {
    graph: LipschitzGraph,
    a0: f64,
    r: f64,
    rho: f64,
    bump: Bump,
}

impl ShiftTransform {
    pub fn new(graph: LipschitzGraph, a0: f64, r: f64, rho: f64, bump: Bump) -> Result<Self> {
        if !(r > 0.0 && r.is_finite()) {
            return Err(invalid("r", format!("need r > 0, got {r}")));
        }
        if !(rho > -1.0 && rho < 1.0) {
            return Err(invalid("rho", format!("need |rho| < 1, got {rho}")));
        }
        let (lo, hi) = graph.domain();
        if a0 - r < lo - 1e-12 || a0 + r > hi + 1e-12 {
            return Err(invalid(
                "r",
                format!("bump support [{}, {}] leaves the graph domain [{lo}, {hi}]", a0 - r, a0 + r),
            ));
        }
        Ok(Self {
            graph,
            a0,
            r,
            rho,
            bump,
        })
    }

    pub fn graph(&self) -> &LipschitzGraph {
        &self.graph
    }

    pub fn a0(&self) -> f64 {
        self.a0
    }

    pub fn r(&self) -> f64 {
        self.r
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn bump(&self) -> &Bump {
        &self.bump
    }

    pub fn s(&self) -> f64 {
        3.0 * self.r
    }

    pub fn centre(&self) -> Point {
        self.graph.point(self.a0)
    }

    /// Same graph, anchor and radius with another magnitude.
    pub fn with_rho(&self, rho: f64) -> Result<Self> {
        Self::new(self.graph.clone(), self.a0, self.r, rho, self.bump.clone())
    }

    /// `h_r(a) = r h-bar((a - a0)/r)`.
    pub fn h_r(&self, a: f64) -> f64 {
        self.r * self.bump.value((a - self.a0) / self.r)
    }

    /// `H(a) = rho h_r(a)` and `H'(a)`.
    #[inline]
    pub fn shift(&self, a: f64) -> (f64, f64) {
        let v = (a - self.a0) / self.r;
        (self.rho * self.r * self.bump.value(v), self.rho * self.bump.derivative(v))
    }

    pub fn branch(&self, x: Point) -> Branch {
        let (a, t) = self.graph.to_frame(x);
        let tau = t - self.graph.height(a);
        self.branch_of(a, tau)
    }

    fn branch_of(&self, a: f64, tau: f64) -> Branch {
        let s = self.s();
        if (a - self.a0).abs() >= self.r || tau.abs() >= s {
            Branch::Outside
        } else if tau <= 0.0 {
            Branch::Lower
        } else {
            Branch::Upper
        }
    }

    /// Frame offset map `tau -> tau'` at tangent coordinate `a`.
    #[inline]
    fn map_tau(&self, tau: f64, hh: f64) -> f64 {
        let s = self.s();
        if hh == 0.0 || tau.abs() >= s {
            tau
        } else if tau < 0.0 {
            tau + (s + tau) * hh / s
        } else {
            tau + (s - tau) * hh / s
        }
    }

    pub fn apply(&self, x: Point) -> Point {
        let (a, t) = self.graph.to_frame(x);
        if (a - self.a0).abs() >= self.r {
            return x;
        }
        let (hh, _) = self.shift(a);
        let f = self.graph.height(a);
        let tau = t - f;
        if hh == 0.0 || tau.abs() >= self.s() {
            return x;
        }
        let t_new = f + self.map_tau(tau, hh);
        x + self.graph.z * (t_new - t)
    }

    /// Exact inverse by solving the branch that contains the image offset.
    pub fn inverse(&self, y: Point) -> Point {
        let (a, t) = self.graph.to_frame(y);
        if (a - self.a0).abs() >= self.r {
            return y;
        }
        let (hh, _) = self.shift(a);
        let s = self.s();
        let f = self.graph.height(a);
        let tau_y = t - f;
        if hh == 0.0 || tau_y.abs() >= s {
            return y;
        }
        let tau = if tau_y < hh {
            (tau_y - hh) / (1.0 + hh / s)
        } else {
            (tau_y - hh) / (1.0 - hh / s)
        };
        y + self.graph.z * (tau - tau_y)
    }

    /// Frame coefficients `(c, d)` of the derivative
    /// `[[1, 0], [c, d]]` (rows: tangent, normal component of the image).
    pub fn frame_coeffs(&self, x: Point) -> (f64, f64) {
        let (a, t) = self.graph.to_frame(x);
        let tau = t - self.graph.height(a);
        self.coeffs_at(a, tau)
    }

    fn coeffs_at(&self, a: f64, tau: f64) -> (f64, f64) {
        let s = self.s();
        match self.branch_of(a, tau) {
            Branch::Outside => (0.0, 1.0),
            br => {
                let (hh, dh) = self.shift(a);
                let df = self.graph.slope(a);
                if br == Branch::Lower {
                    ((s + tau) / s * dh - df * hh / s, 1.0 + hh / s)
                } else {
                    ((s - tau) / s * dh + df * hh / s, 1.0 - hh / s)
                }
            }
        }
    }

    fn to_world(&self, m: Mat2) -> Mat2 {
        let q = self.graph.frame_matrix();
        q * m * q.transpose()
    }

    /// Derivative matrix `D gamma(x)` (rows are gradients of the image
    /// components) in world coordinates.
    pub fn grad(&self, x: Point) -> Mat2 {
        let (c, d) = self.frame_coeffs(x);
        self.to_world(Mat2::new(1.0, 0.0, c, d))
    }

    pub fn jacobian_det(&self, x: Point) -> f64 {
        self.frame_coeffs(x).1.abs()
    }

    /// `W(x) = J(x) (D gamma(x))^{-T}`, so that the pushforward satisfies
    /// `|grad (u o gamma^{-1})(gamma(x))| J(x) = |W(x) grad u(x)|`.
    /// In frame coordinates this is `[[d, -c], [0, 1]]`.
    pub fn lipjac(&self, x: Point) -> Mat2 {
        let (c, d) = self.frame_coeffs(x);
        self.to_world(Mat2::new(d, -c, 0.0, 1.0))
    }

    /// `grad gamma^{-1}(gamma(x)) = (D gamma(x))^{-1}`.
    pub fn inverse_grad_at_image(&self, x: Point) -> Mat2 {
        let (c, d) = self.frame_coeffs(x);
        self.to_world(Mat2::new(1.0, 0.0, -c / d, 1.0 / d))
    }

    /// `U_r`: tangent interval `a0 +- r` and normal interval
    /// `f(a0) +- (3 + Lip) r`, in frame coordinates.
    pub fn tube_box(&self) -> ((f64, f64), (f64, f64)) {
        let t0 = self.graph.height(self.a0);
        let w = (3.0 + self.graph.lip) * self.r;
        ((self.a0 - self.r, self.a0 + self.r), (t0 - w, t0 + w))
    }

    /// Whether `x` lies in `U_r`.
    pub fn in_tube_box(&self, x: Point) -> bool {
        let (a, t) = self.graph.to_frame(x);
        let ((alo, ahi), (tlo, thi)) = self.tube_box();
        a > alo && a < ahi && t > tlo && t < thi
    }

    /// Tangent coordinates where the derivative jumps.
    pub fn kinks(&self) -> Vec<f64> {
        let mut k: Vec<f64> = self.bump.kinks().iter().map(|v| self.a0 + v * self.r).collect();
        k.extend(self.graph.kinks.iter().copied().filter(|&a| (a - self.a0).abs() < self.r));
        k
    }
}

/// `(lambda1, lambda2)` of the Gram matrix of `[[1, 0], [c, d]]`.
/// `lambda2` is computed as `d^2 / lambda1` to avoid cancellation.
pub fn eigenvalues_gradgram(c: f64, d: f64) -> (f64, f64) {
    let s = 1.0 + d * d + c * c;
    let disc = (s * s - 4.0 * d * d).max(0.0).sqrt();
    let l1 = 0.5 * (s + disc);
    (l1, d * d / l1)
}

/// A transformation usable in comparison constants.
#[derive(Debug, Clone)]
pub enum Transform {
    Identity,
    Shift(ShiftTransform),
}

impl Transform {
    pub fn apply(&self, x: Point) -> Point {
        match self {
            Transform::Identity => x,
            Transform::Shift(t) => t.apply(x),
        }
    }

    pub fn inverse(&self, y: Point) -> Point {
        match self {
            Transform::Identity => y,
            Transform::Shift(t) => t.inverse(y),
        }
    }

    pub fn grad(&self, x: Point) -> Mat2 {
        match self {
            Transform::Identity => Mat2::identity(),
            Transform::Shift(t) => t.grad(x),
        }
    }

    pub fn lipjac(&self, x: Point) -> Mat2 {
        match self {
            Transform::Identity => Mat2::identity(),
            Transform::Shift(t) => t.lipjac(x),
        }
    }

    pub fn jacobian_det(&self, x: Point) -> f64 {
        match self {
            Transform::Identity => 1.0,
            Transform::Shift(t) => t.jacobian_det(x),
        }
    }

    pub fn inverse_grad_at_image(&self, x: Point) -> Mat2 {
        match self {
            Transform::Identity => Mat2::identity(),
            Transform::Shift(t) => t.inverse_grad_at_image(x),
        }
    }

    pub fn as_shift(&self) -> Option<&ShiftTransform> {
        match self {
            Transform::Identity => None,
            Transform::Shift(t) => Some(t),
        }
    }
}

/// Double-Lipschitz comparison constants of a transformation pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ComparisonConstants {
    /// `sup_x sup_{|v|=1} |W1 v| + |W2 v| - 2` (at least 0: the pair is the
    /// identity away from the tube).
    pub g: f64,
    /// `sup_x 0.5 |W1^T W1 + W2^T W2 - 2I|`, an upper bound for `g`.
    pub g_upper: f64,
    /// `sup_x |J1 + J2 - 2|`.
    pub j: f64,
    /// `sup_x |grad gamma_i^{-1}(gamma_i(x)) - I|`.
    pub d1: f64,
    pub d2: f64,
    /// `G + J + D1^2 + D2^2`.
    pub t: f64,
    /// Number of sampled points.
    pub samples: usize,
}

impl ComparisonConstants {
    pub fn zero() -> Self {
        Self {
            g: 0.0,
            g_upper: 0.0,
            j: 0.0,
            d1: 0.0,
            d2: 0.0,
            t: 0.0,
            samples: 0,
        }
    }
}

/// Offsets `(a, tau)` covering the tube of a shift: `density` uniform
/// points per axis, geometric refinement towards the anchor and the bump
/// edges, the interface `tau = 0` and the first upper point `tau = +eps`,
/// with a `1e-4 r` belt around derivative kinks left out.
pub fn tube_samples(t: &ShiftTransform, density: usize) -> Vec<(f64, f64)> {
    let (r, s, a0) = (t.r(), t.s(), t.a0());
    let kinks = t.kinks();
    let belt = 1e-4 * r;
    let n = density.max(2);
    let mut a_vals: Vec<f64> = (0..n).map(|k| a0 - r + 2.0 * r * (k as f64 + 0.5) / n as f64).collect();
    for k in 1..=16 {
        let off = r * 0.5f64.powi(k);
        for base in [a0, a0 - r, a0 + r] {
            a_vals.push(base + off);
            a_vals.push(base - off);
        }
    }
    for &kk in &kinks {
        a_vals.push(kk + 1.0001 * belt);
        a_vals.push(kk - 1.0001 * belt);
    }
    a_vals.retain(|&a| (a - a0).abs() < r && kinks.iter().all(|&k| (a - k).abs() >= belt));
    a_vals.sort_by(f64::total_cmp);
    a_vals.dedup();

    let mut tau_vals: Vec<f64> = (0..n).map(|k| -s + 2.0 * s * (k as f64 + 0.5) / n as f64).collect();
    tau_vals.extend([0.0, 1e-12 * s, -s * (1.0 - 1e-9), s * (1.0 - 1e-9)]);
    for k in 1..=8 {
        let off = s * 0.5f64.powi(k);
        tau_vals.extend([off, -off]);
    }
    tau_vals.sort_by(f64::total_cmp);
    tau_vals.dedup();

    let mut out = Vec::with_capacity(a_vals.len() * tau_vals.len());
    for &a in &a_vals {
        for &tau in &tau_vals {
            out.push((a, tau));
        }
    }
    out
}

/// Comparison constants by stratified sampling of the tubes of the shifts
/// involved (outside them both maps are the identity).
pub fn comparison_constants(t1: &Transform, t2: &Transform, density: usize) -> ComparisonConstants {
    let shifts: Vec<&ShiftTransform> = [t1, t2].iter().filter_map(|t| t.as_shift()).collect();
    if shifts.is_empty() {
        return ComparisonConstants::zero();
    }
    let mut points = Vec::new();
    for sh in &shifts {
        let g = sh.graph();
        for (a, tau) in tube_samples(sh, density) {
            points.push(g.from_frame(a, g.height(a) + tau));
        }
    }
    // Work in the frame of the first shift so the scanned unit vectors
    // contain its normal and tangent axes exactly.
    let q = shifts[0].graph().frame_matrix();
    let qt = q.transpose();
    let i = Mat2::identity();
    let rows: Vec<[f64; 5]> = points
        .par_chunks(256)
        .map(|chunk| {
            let mut m = [0.0f64; 5];
            for &x in chunk {
                let w1 = qt * t1.lipjac(x) * q;
                let w2 = qt * t2.lipjac(x) * q;
                m[0] = m[0].max(pair_norm_sup(&w1, &w2));
                m[1] = m[1].max(biestim_upper(&w1, &w2));
                m[2] = m[2].max((t1.jacobian_det(x) + t2.jacobian_det(x) - 2.0).abs());
                m[3] = m[3].max(spectral_norm(&(t1.inverse_grad_at_image(x) - i)));
                m[4] = m[4].max(spectral_norm(&(t2.inverse_grad_at_image(x) - i)));
            }
            m
        })
        .collect();
    let mut m = [0.0f64; 5];
    for row in rows {
        for k in 0..5 {
            m[k] = m[k].max(row[k]);
        }
    }
    ComparisonConstants {
        g: m[0],
        g_upper: m[1],
        j: m[2],
        d1: m[3],
        d2: m[4],
        t: m[0] + m[2] + m[3] * m[3] + m[4] * m[4],
        samples: points.len(),
    }
}

/// `M = sup |gamma(x) - x|`, analytic and sampled.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Displacement {
    pub analytic: f64,
    pub sampled: f64,
}

pub fn max_displacement(t: &ShiftTransform) -> Displacement {
    let analytic = t.rho().abs() * t.r() * t.bump().sup();
    let g = t.graph();
    let n = 4001;
    let mut sampled: f64 = 0.0;
    for k in 0..n {
        let a = t.a0() - t.r() + 2.0 * t.r() * k as f64 / (n - 1) as f64;
        for tau in [0.0, 1e-12 * t.s(), -1e-12 * t.s()] {
            let x = g.from_frame(a, g.height(a) + tau);
            sampled = sampled.max((t.apply(x) - x).norm());
        }
    }
    Displacement { analytic, sampled }
}

/// One row of a scaling sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepRow {
    pub rho: f64,
    /// Constants for `(gamma_rho, gamma_{-rho})`.
    pub pair: ComparisonConstants,
    /// Constants for `(gamma_rho, identity)`.
    pub identity: ComparisonConstants,
    pub displacement: Displacement,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
    /// Least-squares slope of `log T` against `log rho` for the pair.
    pub pair_slope: f64,
    pub identity_slope: f64,
}

/// Least-squares slope of `log y` on `log x` over entries with `x, y > 0`.
pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> Result<f64> {
    let pts: Vec<(f64, f64)> = xs
        .iter()
        .zip(ys)
        .filter(|(x, y)| **x > 0.0 && **y > 0.0)
        .map(|(x, y)| (x.ln(), y.ln()))
        .collect();
    if pts.len() < 3 {
        return Err(Error::DegenerateFit(format!(
            "need at least 3 positive points, got {}",
            pts.len()
        )));
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx == 0.0 {
        return Err(Error::DegenerateFit("all abscissae equal".into()));
    }
    Ok(sxy / sxx)
}

pub fn scaling_sweep(
    graph: &LipschitzGraph,
    a0: f64,
    r: f64,
    bump: &Bump,
    rhos: &[f64],
    density: usize,
) -> Result<SweepTable> {
    if rhos.iter().any(|&p| !(0.0..1.0).contains(&p)) {
        return Err(invalid("rho", "sweep values must lie in [0, 1)"));
    }
    let mut rows = Vec::with_capacity(rhos.len());
    for &rho in rhos {
        if rho == 0.0 {
            rows.push(SweepRow {
                rho,
                pair: ComparisonConstants::zero(),
                identity: ComparisonConstants::zero(),
                displacement: Displacement {
                    analytic: 0.0,
                    sampled: 0.0,
                },
            });
            continue;
        }
        let plus = ShiftTransform::new(graph.clone(), a0, r, rho, bump.clone())?;
        let minus = plus.with_rho(-rho)?;
        let displacement = max_displacement(&plus);
        let plus = Transform::Shift(plus);
        rows.push(SweepRow {
            rho,
            pair: comparison_constants(&plus, &Transform::Shift(minus), density),
            identity: comparison_constants(&plus, &Transform::Identity, density),
            displacement,
        });
    }
    let xs: Vec<f64> = rows.iter().map(|r| r.rho).collect();
    let pair_t: Vec<f64> = rows.iter().map(|r| r.pair.t).collect();
    let id_t: Vec<f64> = rows.iter().map(|r| r.identity.t).collect();
    Ok(SweepTable {
        pair_slope: loglog_slope(&xs, &pair_t)?,
        identity_slope: loglog_slope(&xs, &id_t)?,
        rows,
    })
}
