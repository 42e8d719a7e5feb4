//! Test images on the unit square, optionally with seeded noise.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::grid::GridImage;
use crate::Point;

/// Closed-form shapes, all centred at `(0.5, 0.5)` where that makes sense.
/// Indicators take the values 0 and 1 with no anti-aliasing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum PhantomKind {
    /// `1` where `x1 > offset`.
    HalfPlane { offset: f64 },
    Square { side: f64 },
    Disk { radius: f64 },
    /// `tiles x tiles` board, `1` on tiles with even index sum.
    Checkerboard { tiles: usize },
    /// `exp(-|x - c|^2 / (2 width^2))`.
    SmoothBump { width: f64 },
}

impl PhantomKind {
    /// Parses a kind name with its default parameters.
    pub fn parse(name: &str) -> Result<Self> {
        Ok(match name {
            "half-plane" => PhantomKind::HalfPlane { offset: 0.5 },
            "square" => PhantomKind::Square { side: 0.6 },
            "disk" => PhantomKind::Disk { radius: 0.25 },
            "checkerboard" => PhantomKind::Checkerboard { tiles: 4 },
            "smooth-bump" | "bump" => PhantomKind::SmoothBump { width: 0.15 },
            _ => {
                return Err(Error::Unknown {
                    what: "phantom",
                    name: name.to_string(),
                })
            }
        })
    }

    pub fn value(&self, x: Point) -> f64 {
        let c = Point::new(0.5, 0.5);
        let ind = |b: bool| if b { 1.0 } else { 0.0 };
        match *self {
            PhantomKind::HalfPlane { offset } => ind(x.x > offset),
            PhantomKind::Square { side } => ind((x.x - 0.5).abs() < 0.5 * side && (x.y - 0.5).abs() < 0.5 * side),
            PhantomKind::Disk { radius } => ind((x - c).norm() < radius),
            PhantomKind::Checkerboard { tiles } => {
                let t = tiles as f64;
                let k = (x.x * t).floor() as i64 + (x.y * t).floor() as i64;
                ind(k.rem_euclid(2) == 0)
            }
            PhantomKind::SmoothBump { width } => (-(x - c).norm_squared() / (2.0 * width * width)).exp(),
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            PhantomKind::HalfPlane { offset } => offset.is_finite(),
            PhantomKind::Square { side } => side > 0.0 && side <= 1.0,
            PhantomKind::Disk { radius } => radius > 0.0 && radius <= 0.5,
            PhantomKind::Checkerboard { tiles } => tiles >= 1,
            PhantomKind::SmoothBump { width } => width > 0.0 && width.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(invalid("phantom", format!("parameters out of range: {self:?}")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Noise {
    #[default]
    None,
    /// I.i.d. uniform on `[-amplitude, amplitude]`.
    Uniform { amplitude: f64 },
    Gaussian { sigma: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhantomSpec {
    #[serde(flatten)]
    pub kind: PhantomKind,
    /// Cells per side of the unit square.
    pub size: usize,
    #[serde(default)]
    pub noise: Noise,
    #[serde(default)]
    pub seed: u64,
}

/// Samples the phantom at the cell centres of a `size x size` grid with
/// spacing `1/size`, then adds noise drawn from ChaCha8 seeded by `seed`.
pub fn generate_phantom(spec: &PhantomSpec) -> Result<GridImage> {
    spec.kind.validate()?;
    if spec.size == 0 {
        return Err(Error::InvalidGrid("size must be positive".into()));
    }
    let n = spec.size;
    let clean = GridImage::from_fn(n, n, 1.0 / n as f64, |x| spec.kind.value(x))?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise: Vec<f64> = match spec.noise {
        Noise::None => return Ok(clean),
        Noise::Uniform { amplitude } => {
            if !(amplitude >= 0.0 && amplitude.is_finite()) {
                return Err(invalid("amplitude", "must be finite and non-negative"));
            }
            if amplitude == 0.0 {
                return Ok(clean);
            }
            let d = Uniform::new_inclusive(-amplitude, amplitude).map_err(|e| invalid("amplitude", e.to_string()))?;
            (0..n * n).map(|_| d.sample(&mut rng)).collect()
        }
        Noise::Gaussian { sigma } => {
            let d = Normal::new(0.0, sigma).map_err(|e| invalid("sigma", e.to_string()))?;
            if sigma == 0.0 {
                return Ok(clean);
            }
            (0..n * n).map(|_| d.sample(&mut rng)).collect()
        }
    };
    let values = clean.values().iter().zip(noise).map(|(a, b)| a + b).collect();
    Ok(clean.with_values(values))
}
