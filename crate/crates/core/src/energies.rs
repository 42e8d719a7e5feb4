//! Fidelities `phi(t) = weight * |t|^p`, gradient energies `psi`, and samplers
//! for the inequalities these are required to satisfy.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::grid::{grad_forward, GridImage};
use crate::linalg::{pair_norm_sup, spectral_norm};
use crate::{Mat2, Point};

/// Slack used by the sampled inequality checks.
pub const CHECK_TOL: f64 = 1e-12;

/// Power fidelity `weight * |t|^p` with increase constant `c_phi`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FidelitySpec {
    pub p: f64,
    #[serde(default = "one")]
    pub weight: f64,
    /// Defaults to `p`, which is valid for powers.
    #[serde(default)]
    pub c_phi: Option<f64>,
}

fn one() -> f64 {
    1.0
}

impl FidelitySpec {
    pub fn power(p: f64, weight: f64) -> Result<Self> {
        let s = Self {
            p,
            weight,
            c_phi: None,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.p >= 1.0 && self.p.is_finite()) {
            return Err(invalid("p", format!("need p >= 1, got {}", self.p)));
        }
        if !(self.weight > 0.0 && self.weight.is_finite()) {
            return Err(invalid("weight", format!("need weight > 0, got {}", self.weight)));
        }
        if let Some(c) = self.c_phi {
            if !(c > 0.0) {
                return Err(invalid("c_phi", format!("need C > 0, got {c}")));
            }
        }
        Ok(())
    }

    pub fn c_phi(&self) -> f64 {
        self.c_phi.unwrap_or(self.p)
    }

    pub fn with_c_phi(mut self, c: f64) -> Self {
        self.c_phi = Some(c);
        self
    }
}

pub fn phi_value(spec: &FidelitySpec, t: f64) -> f64 {
    spec.weight * t.abs().powf(spec.p)
}

/// Returns the sample pairs `(x, y)` with
/// `phi(x) - phi(y) > C (|x| - |y|) |x|^(p-1) + 1e-12`.
///
/// The weight multiplies both sides, so the check concerns the normalised power.
pub fn check_p_increasing(spec: &FidelitySpec, samples: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let c = spec.c_phi();
    samples
        .iter()
        .copied()
        .filter(|&(x, y)| {
            let lhs = phi_value(spec, x) - phi_value(spec, y);
            let rhs = spec.weight * c * (x.abs() - y.abs()) * x.abs().powf(spec.p - 1.0);
            lhs > rhs + CHECK_TOL
        })
        .collect()
}

type ScalarFn = dyn Fn(f64) -> f64 + Send + Sync;
type IntervalFn = dyn Fn(f64) -> (f64, f64) + Send + Sync;

/// Gradient energy family member.
#[derive(Clone)]
pub enum PsiKind {
    /// `psi(t) = t`.
    Tv,
    Huber { eta: f64 },
    /// `psi(t) = eps t + 1 - exp(-t)`.
    Concave { eps: f64 },
    /// `psi(t) = log(1 + t^2)`.
    PeronaMalik,
    Custom {
        name: String,
        value: Arc<ScalarFn>,
        subgradient: Arc<IntervalFn>,
    },
}

impl fmt::Debug for PsiKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PsiKind::Tv => write!(f, "Tv"),
            PsiKind::Huber { eta } => write!(f, "Huber {{ eta: {eta} }}"),
            PsiKind::Concave { eps } => write!(f, "Concave {{ eps: {eps} }}"),
            PsiKind::PeronaMalik => write!(f, "PeronaMalik"),
            PsiKind::Custom { name, .. } => write!(f, "Custom({name})"),
        }
    }
}

/// A scalar energy `psi: [0, inf) -> [0, inf)` with its subdifferential and
/// the constants used by the comparison estimates.
#[derive(Debug, Clone)]
pub struct EnergyPsi {
    pub kind: PsiKind,
    /// `lim psi(t)/t` as `t -> inf`.
    pub psi_inf: f64,
    pub k_psi: Option<f64>,
    pub c_psi: Option<f64>,
    pub convex: bool,
}

impl EnergyPsi {
    pub fn tv() -> Self {
        Self {
            kind: PsiKind::Tv,
            psi_inf: 1.0,
            k_psi: None,
            c_psi: None,
            convex: true,
        }
    }

    pub fn custom(
        name: impl Into<String>,
        value: impl Fn(f64) -> f64 + Send + Sync + 'static,
        subgradient: impl Fn(f64) -> (f64, f64) + Send + Sync + 'static,
        psi_inf: f64,
        k_c: Option<(f64, f64)>,
        convex: bool,
    ) -> Self {
        Self {
            kind: PsiKind::Custom {
                name: name.into(),
                value: Arc::new(value),
                subgradient: Arc::new(subgradient),
            },
            psi_inf,
            k_psi: k_c.map(|kc| kc.0),
            c_psi: k_c.map(|kc| kc.1),
            convex,
        }
    }

    pub fn name(&self) -> String {
        match &self.kind {
            PsiKind::Tv => "tv".into(),
            PsiKind::Huber { .. } => "huber".into(),
            PsiKind::Concave { .. } => "concave".into(),
            PsiKind::PeronaMalik => "perona-malik".into(),
            PsiKind::Custom { name, .. } => name.clone(),
        }
    }

    pub fn value(&self, t: f64) -> f64 {
        match &self.kind {
            PsiKind::Tv => t,
            PsiKind::Huber { eta } => {
                if t >= 1.0 / eta {
                    t - 0.5 / eta
                } else {
                    0.5 * eta * t * t
                }
            }
            PsiKind::Concave { eps } => eps * t + (-(-t).exp_m1()),
            PsiKind::PeronaMalik => (t * t).ln_1p(),
            PsiKind::Custom { value, .. } => value(t),
        }
    }

    /// Subdifferential at `t >= 0` as a closed interval. At `t = 0` the
    /// one-sided convention for functions on `[0, inf)` is used, so TV gives
    /// `[0, 1]`.
    pub fn subgradient(&self, t: f64) -> (f64, f64) {
        match &self.kind {
            PsiKind::Tv => {
                if t > 0.0 {
                    (1.0, 1.0)
                } else {
                    (0.0, 1.0)
                }
            }
            PsiKind::Huber { eta } => {
                let g = (eta * t).min(1.0);
                (g, g)
            }
            PsiKind::Concave { eps } => {
                let g = eps + (-t).exp();
                (g, g)
            }
            PsiKind::PeronaMalik => {
                let g = 2.0 * t / (1.0 + t * t);
                (g, g)
            }
            PsiKind::Custom { subgradient, .. } => subgradient(t),
        }
    }

    /// Convex conjugate of `psi` extended evenly, evaluated at `s >= 0`.
    /// Available in closed form for TV and Huber only.
    pub fn conjugate(&self, s: f64) -> Option<f64> {
        match self.kind {
            PsiKind::Tv => Some(if s <= 1.0 + 1e-12 { 0.0 } else { f64::INFINITY }),
            PsiKind::Huber { eta } => Some(if s <= 1.0 + 1e-12 {
                s * s / (2.0 * eta)
            } else {
                f64::INFINITY
            }),
            _ => None,
        }
    }

    pub fn is_member_candidate(&self) -> bool {
        self.k_psi.is_some() && self.c_psi.is_some()
    }
}

pub fn huber_psi(eta: f64) -> Result<EnergyPsi> {
    if !(eta > 0.0 && eta.is_finite()) {
        return Err(invalid("eta", format!("need eta > 0, got {eta}")));
    }
    Ok(EnergyPsi {
        kind: PsiKind::Huber { eta },
        psi_inf: 1.0,
        k_psi: Some(1.0 / eta),
        c_psi: Some(eta),
        convex: true,
    })
}

/// Slope at zero of the concave example.
pub const CONCAVE_EPS: f64 = 0.1;

/// Concave energy `0.1 t + 1 - exp(-t)`: `psi^0 = 1.1`, `psi_inf = 0.1`.
pub fn concave_psi_example() -> EnergyPsi {
    EnergyPsi {
        kind: PsiKind::Concave { eps: CONCAVE_EPS },
        psi_inf: CONCAVE_EPS,
        k_psi: None,
        c_psi: None,
        convex: false,
    }
}

/// `log(1 + t^2)`; neither convex nor concave, with `psi_inf = 0`.
pub fn perona_malik_psi() -> EnergyPsi {
    EnergyPsi {
        kind: PsiKind::PeronaMalik,
        psi_inf: 0.0,
        k_psi: None,
        c_psi: None,
        convex: false,
    }
}

/// `lim psi(t)/t` as `t -> 0` for the concave example.
pub fn psi_zero_slope(psi: &EnergyPsi) -> f64 {
    psi.subgradient(0.0).1
}

/// Flags `(s, t)` pairs breaking the monotonicity bound that defines the
/// family: `<dpsi(t) - dpsi(s), t - s>` must be `<= 0` when
/// `min(s, t) >= K` and `<= C |t - s|^2` otherwise. Every combination of
/// subgradient interval endpoints is tested.
pub fn check_psi_membership(psi: &EnergyPsi, samples: &[(f64, f64)]) -> Result<Vec<(f64, f64)>> {
    let (k, c) = match (psi.k_psi, psi.c_psi) {
        (Some(k), Some(c)) => (k, c),
        _ => {
            return Err(invalid(
                "psi",
                format!("{} carries no (K, C) constants", psi.name()),
            ))
        }
    };
    Ok(samples
        .iter()
        .copied()
        .filter(|&(s, t)| {
            let (sl, sh) = psi.subgradient(s);
            let (tl, th) = psi.subgradient(t);
            let d = t - s;
            let bound = if s.min(t) >= k { 0.0 } else { c * d * d };
            let tol = CHECK_TOL * (1.0 + d * d);
            [(tl, sl), (tl, sh), (th, sl), (th, sh)]
                .iter()
                .any(|&(a, b)| (a - b) * d > bound + tol)
        })
        .collect())
}

/// `alpha * sum psi(|grad u|) h^2`; grid functions have no singular part.
pub fn tv_psi_value(u: &GridImage, psi: &EnergyPsi, alpha: f64) -> f64 {
    let g = grad_forward(u);
    let h2 = u.spacing() * u.spacing();
    alpha * (0..g.d1.len()).map(|k| psi.value(g.norm_at(k))).sum::<f64>() * h2
}

/// Left side and right-hand ingredients of the paired energy estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PairGap {
    /// `c psi(|Av|) + d psi(|Bv|) - 2 psi(|v|)`.
    pub lhs: f64,
    /// `sup_{|w|=1} |cAw| + |dBw| - 2` by dense sampling.
    pub g_tilde: f64,
    /// Upper bound `0.5 |c^2 A^T A + d^2 B^T B - 2I|` for `g_tilde`.
    pub g_tilde_upper: f64,
    /// `|c + d - 2|`.
    pub j_tilde: f64,
    pub d_a_sq: f64,
    pub d_b_sq: f64,
    pub v_norm: f64,
}

impl PairGap {
    /// `(G + J + D_A^2 + D_B^2) |v|`.
    pub fn rhs(&self) -> f64 {
        (self.g_tilde + self.j_tilde + self.d_a_sq + self.d_b_sq) * self.v_norm
    }
}

pub fn energy_pair_gap(psi: &EnergyPsi, a: &Mat2, b: &Mat2, c: f64, d: f64, v: Point) -> Result<PairGap> {
    if !(c > 0.0 && d > 0.0) {
        return Err(invalid("c, d", "need c, d > 0"));
    }
    let i = Mat2::identity();
    let lhs = c * psi.value((a * v).norm()) + d * psi.value((b * v).norm()) - 2.0 * psi.value(v.norm());
    let (ca, db) = (a * c, b * d);
    Ok(PairGap {
        lhs,
        g_tilde: pair_norm_sup(&ca, &db),
        g_tilde_upper: biestim_upper(&ca, &db),
        j_tilde: (c + d - 2.0).abs(),
        d_a_sq: spectral_norm(&(a - i)).powi(2),
        d_b_sq: spectral_norm(&(b - i)).powi(2),
        v_norm: v.norm(),
    })
}

/// `0.5 |W1^T W1 + W2^T W2 - 2I|` (spectral).
pub fn biestim_upper(w1: &Mat2, w2: &Mat2) -> f64 {
    0.5 * spectral_norm(&(w1.transpose() * w1 + w2.transpose() * w2 - 2.0 * Mat2::identity()))
}

/// Right side of the concave estimate: `psi^0 max(0, |cAv| + |dBv| - 2|v|)`.
pub fn concave_bound(psi: &EnergyPsi, a: &Mat2, b: &Mat2, c: f64, d: f64, v: Point) -> f64 {
    psi_zero_slope(psi) * ((c * a * v).norm() + (d * b * v).norm() - 2.0 * v.norm()).max(0.0)
}

/// Right side of the Perona-Malik estimate: `|c^2 A^T A + d^2 B^T B - 2I| |v|`.
pub fn perona_malik_bound(a: &Mat2, b: &Mat2, c: f64, d: f64, v: Point) -> f64 {
    let m = c * c * a.transpose() * a + d * d * b.transpose() * b - 2.0 * Mat2::identity();
    spectral_norm(&m) * v.norm()
}

/// Regulariser `alpha * TV_psi`.
#[derive(Debug, Clone)]
pub struct RegulariserSpec {
    pub psi: EnergyPsi,
    pub alpha: f64,
}

impl RegulariserSpec {
    pub fn tv(alpha: f64) -> Result<Self> {
        Self::new(EnergyPsi::tv(), alpha)
    }

    pub fn huber(eta: f64, alpha: f64) -> Result<Self> {
        Self::new(huber_psi(eta)?, alpha)
    }

    pub fn new(psi: EnergyPsi, alpha: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(invalid("alpha", format!("need alpha > 0, got {alpha}")));
        }
        Ok(Self { psi, alpha })
    }

    pub fn is_tv(&self) -> bool {
        matches!(self.psi.kind, PsiKind::Tv)
    }

    pub fn value(&self, u: &GridImage) -> f64 {
        tv_psi_value(u, &self.psi, self.alpha)
    }

    pub fn require_convex(&self) -> Result<()> {
        if self.psi.convex {
            Ok(())
        } else {
            Err(Error::NonConvexRegulariser)
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
enum RegulariserJson {
    Tv { alpha: f64 },
    Huber { eta: f64, alpha: f64 },
    Concave { alpha: f64 },
    PeronaMalik { alpha: f64 },
}

impl Serialize for RegulariserSpec {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let alpha = self.alpha;
        let j = match &self.psi.kind {
            PsiKind::Tv => RegulariserJson::Tv { alpha },
            PsiKind::Huber { eta } => RegulariserJson::Huber { eta: *eta, alpha },
            PsiKind::Concave { .. } => RegulariserJson::Concave { alpha },
            PsiKind::PeronaMalik => RegulariserJson::PeronaMalik { alpha },
            PsiKind::Custom { name, .. } => {
                return Err(serde::ser::Error::custom(format!(
                    "custom energy `{name}` is not serialisable"
                )))
            }
        };
        j.serialize(s)
    }
}

impl<'de> Deserialize<'de> for RegulariserSpec {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let j = RegulariserJson::deserialize(d)?;
        let r = match j {
            RegulariserJson::Tv { alpha } => RegulariserSpec::tv(alpha),
            RegulariserJson::Huber { eta, alpha } => RegulariserSpec::huber(eta, alpha),
            RegulariserJson::Concave { alpha } => RegulariserSpec::new(concave_psi_example(), alpha),
            RegulariserJson::PeronaMalik { alpha } => RegulariserSpec::new(perona_malik_psi(), alpha),
        };
        r.map_err(serde::de::Error::custom)
    }
}

/// A fidelity and regulariser pair, the JSON model description.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelSpec {
    pub fidelity: FidelitySpec,
    pub regulariser: RegulariserSpec,
}

impl ModelSpec {
    pub fn from_json(s: &str) -> Result<Self> {
        let m: ModelSpec = serde_json::from_str(s)?;
        m.fidelity.validate()?;
        Ok(m)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }
}
