//! Reproducible scenarios: a named experiment, its seed and grid size, the
//! metrics it computes (each with an explicit limit and pass flag) and the
//! CSV/PGM/JSON files it leaves behind.

use std::collections::BTreeMap;
use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::curvature::{corner_cut_radius, level_line_curvature, mean_curvature_of_graph, r_curvature_estimate};
use crate::energies::{biestim_upper, check_psi_membership, huber_psi, EnergyPsi, FidelitySpec, ModelSpec, RegulariserSpec};
use crate::error::{invalid, Error, Result};
use crate::grid::{perimeter, total_variation, GridImage, Mask};
use crate::io::{guard_overwrite, write_bytes, write_csv, write_pgm, PgmFormat};
use crate::jumps::{containment_excess, default_threshold, detect_jumps, DEFAULT_WINDOW};
use crate::linalg::{pair_norm_sup, spectral_norm};
use crate::phantom::{generate_phantom, Noise, PhantomKind, PhantomSpec};
use crate::pushforward::{
    double_lip_gap, transport_check, transport_quadrature, wedge_area, FunctionalImage, QuadratureSpec,
};
use crate::shift::{comparison_constants, scaling_sweep, tube_samples, Bump, LipschitzGraph, ShiftTransform, Transform};
use crate::solvers::{objective_value, oracle_solve, solve_denoise, SolverConfig};
use crate::{Mat2, Point};

/// One named number with the condition it has to meet.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Metric {
    pub name: String,
    /// `null` in JSON when the computation failed.
    pub value: f64,
    /// Human-readable condition, e.g. `<= 1e-5`.
    pub limit: String,
    pub pass: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl Metric {
    fn new(name: impl Into<String>, value: f64, limit: String, pass: bool) -> Self {
        Self {
            name: name.into(),
            value,
            limit,
            pass,
            error: None,
        }
    }

    pub fn at_most(name: impl Into<String>, value: f64, limit: f64) -> Self {
        Self::new(name, value, format!("<= {limit:e}"), value <= limit)
    }

    pub fn at_least(name: impl Into<String>, value: f64, limit: f64) -> Self {
        Self::new(name, value, format!(">= {limit:e}"), value >= limit)
    }

    pub fn in_range(name: impl Into<String>, value: f64, lo: f64, hi: f64) -> Self {
        Self::new(name, value, format!("in [{lo}, {hi}]"), value >= lo && value <= hi)
    }

    /// `|value - target| <= tol |target|`.
    pub fn rel_within(name: impl Into<String>, value: f64, target: f64, tol: f64) -> Self {
        let pass = (value - target).abs() <= tol * target.abs();
        Self::new(name, value, format!("{target:e} +- {}%", tol * 100.0), pass)
    }

    /// Reported for context; always passes.
    pub fn info(name: impl Into<String>, value: f64) -> Self {
        Self::new(name, value, "-".into(), true)
    }

    pub fn failed(name: impl Into<String>, err: &Error) -> Self {
        Self {
            name: name.into(),
            value: f64::NAN,
            limit: "-".into(),
            pass: false,
            error: Some(err.to_string()),
        }
    }
}

/// Outcome of one scenario. Contains no timings, so replays are
/// byte-identical.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Report {
    pub scenario: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub criterion: Option<u32>,
    pub seed: u64,
    pub passed: bool,
    pub metrics: Vec<Metric>,
    pub environment: BTreeMap<String, Value>,
    pub artifacts: Vec<String>,
}

impl Report {
    pub fn metric(&self, name: &str) -> Option<&Metric> {
        self.metrics.iter().find(|m| m.name == name)
    }

    pub fn failures(&self) -> impl Iterator<Item = &Metric> {
        self.metrics.iter().filter(|m| !m.pass)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// A run request. Built-in names select one of the experiments below;
/// any other name solves the given phantom with the given model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    #[serde(default = "default_seed")]
    pub seed: u64,
    /// Overrides the experiment's default grid side.
    #[serde(default)]
    pub resolution: Option<usize>,
    #[serde(default)]
    pub phantom: Option<PhantomSpec>,
    #[serde(default)]
    pub model: Option<ModelSpec>,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    #[serde(default)]
    pub force: bool,
}

fn default_seed() -> u64 {
    1
}

impl Scenario {
    pub fn builtin(name: &str) -> Result<Self> {
        if criterion_of(name).is_none() {
            return Err(Error::Unknown {
                what: "scenario",
                name: name.into(),
            });
        }
        Ok(Self::named(name))
    }

    fn named(name: &str) -> Self {
        Self {
            name: name.into(),
            seed: default_seed(),
            resolution: None,
            phantom: None,
            model: None,
            out_dir: None,
            force: false,
        }
    }
}

/// Built-in scenarios and the acceptance criterion each one checks.
pub const BUILTINS: &[(&str, u32)] = &[
    ("jacobian-identity", 1),
    ("pair-jacobian", 2),
    ("comparison-scaling", 3),
    ("pair-norm-inequality", 4),
    ("double-lipschitz-tv", 5),
    ("huber-membership", 6),
    ("transport-estimate", 7),
    ("wedge-area", 8),
    ("jump-containment-rof", 9),
    ("jump-containment-p15", 9),
    ("jump-containment-huber", 9),
    ("corner-rounding-l1", 10),
    ("graph-mean-curvature", 11),
    ("r-curvature-circle", 12),
    ("oracle-equivalence", 13),
    ("constant-image", 13),
    ("coarea-nested", 14),
];

pub fn criterion_of(name: &str) -> Option<u32> {
    BUILTINS.iter().find(|(n, _)| *n == name).map(|&(_, c)| c)
}

/// A numeric table written as CSV next to the report.
#[derive(Debug, Clone)]
struct Table {
    file: String,
    header: Vec<&'static str>,
    rows: Vec<Vec<f64>>,
}

#[derive(Default)]
struct Run {
    metrics: Vec<Metric>,
    env: BTreeMap<String, Value>,
    tables: Vec<Table>,
    images: Vec<(String, GridImage)>,
}

impl Run {
    fn env(&mut self, key: &str, v: impl Serialize) {
        self.env.insert(key.into(), serde_json::to_value(v).unwrap_or(Value::Null));
    }

    /// Runs one metric group; an error becomes a failed metric named `name`.
    fn attempt(&mut self, name: &str, f: impl FnOnce(&mut Run) -> Result<()>) {
        if let Err(e) = f(self) {
            self.metrics.push(Metric::failed(name, &e));
        }
    }

    fn push(&mut self, m: Metric) {
        self.metrics.push(m);
    }
}

/// Runs a scenario and, when `out_dir` is set, writes
/// `<out_dir>/<name>.json` plus its tables and images. Every target path is
/// checked before anything is written.
pub fn run_scenario(s: &Scenario) -> Result<Report> {
    if s.name.is_empty() || s.name.contains(['/', '\\']) {
        return Err(invalid("name", "must be a plain file stem"));
    }
    if s.resolution == Some(0) {
        return Err(invalid("resolution", "must be positive"));
    }
    let mut run = Run::default();
    run.env("seed", s.seed);
    match s.name.as_str() {
        "jacobian-identity" => jacobian_identity(s, &mut run),
        "pair-jacobian" => pair_jacobian(&mut run),
        "comparison-scaling" => comparison_scaling(&mut run),
        "pair-norm-inequality" => pair_norm_inequality(s, &mut run),
        "double-lipschitz-tv" => double_lipschitz_tv(&mut run),
        "huber-membership" => huber_membership(s, &mut run),
        "transport-estimate" => transport_estimate(s, &mut run),
        "wedge-area" => wedge(s, &mut run),
        "jump-containment-rof" => containment(s, &mut run, RegulariserSpec::tv(CONTAINMENT_ALPHA)?, 2.0),
        "jump-containment-p15" => containment(s, &mut run, RegulariserSpec::tv(CONTAINMENT_ALPHA)?, 1.5),
        "jump-containment-huber" => containment(
            s,
            &mut run,
            RegulariserSpec::huber(CONTAINMENT_HUBER_ETA, CONTAINMENT_ALPHA)?,
            2.0,
        ),
        "corner-rounding-l1" => corner_rounding(s, &mut run),
        "graph-mean-curvature" => graph_mean_curvature(&mut run),
        "r-curvature-circle" => r_curvature_circle(&mut run),
        "oracle-equivalence" => oracle_equivalence(s, &mut run),
        "constant-image" => constant_image(s, &mut run),
        "coarea-nested" => coarea_nested(s, &mut run),
        _ => custom_solve(s, &mut run)?,
    }

    let mut report = Report {
        scenario: s.name.clone(),
        criterion: criterion_of(&s.name),
        seed: s.seed,
        passed: run.metrics.iter().all(|m| m.pass) && !run.metrics.is_empty(),
        metrics: run.metrics,
        environment: run.env,
        artifacts: Vec::new(),
    };
    if let Some(dir) = &s.out_dir {
        let report_path = dir.join(format!("{}.json", s.name));
        let table_paths: Vec<PathBuf> = run.tables.iter().map(|t| dir.join(&t.file)).collect();
        let image_paths: Vec<PathBuf> = run.images.iter().map(|(f, _)| dir.join(f)).collect();
        for p in table_paths.iter().chain(&image_paths).chain([&report_path]) {
            guard_overwrite(p, s.force)?;
        }
        for p in &image_paths {
            guard_overwrite(&crate::io::sidecar_path(p), s.force)?;
        }
        for (t, p) in run.tables.iter().zip(&table_paths) {
            write_csv(p, &t.header, &t.rows, s.force)?;
            report.artifacts.push(p.display().to_string());
        }
        for ((_, img), p) in run.images.iter().zip(&image_paths) {
            write_pgm(p, img, PgmFormat::Binary, 65535, s.force)?;
            report.artifacts.push(p.display().to_string());
        }
        report.artifacts.push(report_path.display().to_string());
        write_bytes(&report_path, report.to_json()?.as_bytes(), s.force)?;
    }
    Ok(report)
}

/// Appends the report as one JSON line.
pub fn append_jsonl(path: &Path, report: &Report) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    let mut f = OpenOptions::new().create(true).append(true).open(path)?;
    writeln!(f, "{}", serde_json::to_string(report)?)?;
    Ok(())
}

/// Runs every built-in in order.
pub fn run_suite(seed: u64, out_dir: Option<&Path>, force: bool) -> Result<Vec<Report>> {
    BUILTINS
        .iter()
        .map(|(name, _)| {
            let mut s = Scenario::named(name);
            s.seed = seed;
            s.out_dir = out_dir.map(Path::to_path_buf);
            s.force = force;
            run_scenario(&s)
        })
        .collect()
}

// Shared geometry: a horizontal interface and a tilted circular arc.

const TUBE_R: f64 = 0.1;

fn flat_graph() -> Result<LipschitzGraph> {
    LipschitzGraph::flat(Point::new(0.0, 1.0), 0.5, 0.5, 0.3)
}

fn circle_graph() -> Result<LipschitzGraph> {
    LipschitzGraph::circle(Point::new(0.6, 0.8), Point::new(0.45, 0.3), 0.3, 0.2)
}

fn graphs() -> Result<Vec<(&'static str, LipschitzGraph)>> {
    Ok(vec![("flat", flat_graph()?), ("circle", circle_graph()?)])
}

fn mid(g: &LipschitzGraph) -> f64 {
    let (lo, hi) = g.domain();
    0.5 * (lo + hi)
}

fn shift_on(g: &LipschitzGraph, rho: f64) -> Result<ShiftTransform> {
    ShiftTransform::new(g.clone(), mid(g), TUBE_R, rho, Bump::Standard)
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

const JACOBIAN_POINTS: usize = 1000;
const JACOBIAN_FD_STEP: f64 = 1e-6;

fn jacobian_identity(s: &Scenario, run: &mut Run) {
    run.env("points_per_graph", JACOBIAN_POINTS);
    run.env("fd_step", JACOBIAN_FD_STEP);
    let mut rng = rng(s.seed);
    let mut rows = Vec::new();
    let graphs = match graphs() {
        Ok(g) => g,
        Err(e) => return run.push(Metric::failed("max_rel_error", &e)),
    };
    for (gname, g) in graphs {
        run.attempt(&format!("max_rel_error_{gname}"), |run| {
            let mut worst: f64 = 0.0;
            let mut taken = 0;
            while taken < JACOBIAN_POINTS {
                let rho = rng.random_range(-0.9..0.9);
                let t = shift_on(&g, rho)?;
                let (r, sw) = (t.r(), t.s());
                let a = rng.random_range(t.a0() - r..t.a0() + r);
                let tau = rng.random_range(-sw..sw);
                // Keep the difference stencil off the derivative kinks.
                let belt = 1e-4 * r;
                if t.kinks().iter().any(|k| (a - k).abs() < belt) || tau.abs() < belt || sw - tau.abs() < belt {
                    continue;
                }
                let x = g.from_frame(a, g.height(a) + tau);
                let h = JACOBIAN_FD_STEP;
                let c1 = (t.apply(x + Point::new(h, 0.0)) - t.apply(x - Point::new(h, 0.0))) / (2.0 * h);
                let c2 = (t.apply(x + Point::new(0.0, h)) - t.apply(x - Point::new(0.0, h))) / (2.0 * h);
                let fd = (c1.x * c2.y - c1.y * c2.x).abs();
                let exact = t.jacobian_det(x);
                let err = (fd - exact).abs() / exact;
                worst = worst.max(err);
                rows.push(vec![rho, x.x, x.y, exact, fd, err]);
                taken += 1;
            }
            run.push(Metric::at_most(format!("max_rel_error_{gname}"), worst, 1e-5));
            Ok(())
        });
    }
    run.tables.push(Table {
        file: "jacobian-identity.csv".into(),
        header: vec!["rho", "x1", "x2", "jacobian", "fd_jacobian", "rel_error"],
        rows,
    });
}

const PAIR_RHOS: [f64; 4] = [0.5, 0.1, 0.01, 1e-3];
const PAIR_DENSITY: usize = 64;

fn pair_jacobian(run: &mut Run) {
    run.env("density", PAIR_DENSITY);
    run.env("rho", PAIR_RHOS);
    run.attempt("pair_jacobian", |run| {
        for (gname, g) in graphs()? {
            let mut worst: f64 = 0.0;
            for rho in PAIR_RHOS {
                let t = shift_on(&g, rho)?;
                let m = t.with_rho(-rho)?;
                let c = comparison_constants(&Transform::Shift(t), &Transform::Shift(m), PAIR_DENSITY);
                worst = worst.max(c.j);
            }
            run.push(Metric::at_most(format!("pair_jacobian_{gname}"), worst, 1e-14));
        }
        Ok(())
    });
}

const SWEEP_DENSITY: usize = 32;

fn sweep_rhos() -> Vec<f64> {
    (3..=10).map(|k| 0.5f64.powi(k)).collect()
}

fn comparison_scaling(run: &mut Run) {
    run.env("density", SWEEP_DENSITY);
    run.env("r", TUBE_R);
    run.env("rho", sweep_rhos());
    let gs = match graphs() {
        Ok(g) => g,
        Err(e) => return run.push(Metric::failed("pair_slope", &e)),
    };
    for (gname, g) in gs {
        run.attempt(&format!("pair_slope_{gname}"), |run| {
            let table = scaling_sweep(&g, mid(&g), TUBE_R, &Bump::Standard, &sweep_rhos(), SWEEP_DENSITY)?;
            run.push(Metric::in_range(format!("pair_slope_{gname}"), table.pair_slope, 1.9, 2.1));
            run.push(Metric::in_range(format!("identity_slope_{gname}"), table.identity_slope, 0.9, 1.1));
            let m_err = table
                .rows
                .iter()
                .map(|r| (r.displacement.sampled / (r.rho * TUBE_R) - 1.0).abs())
                .fold(0.0, f64::max);
            run.push(Metric::at_most(format!("displacement_rel_error_{gname}"), m_err, 1e-3));
            run.tables.push(Table {
                file: format!("comparison-scaling-{gname}.csv"),
                header: vec!["rho", "t_pair", "g_pair", "t_identity", "g_identity", "m_sampled", "m_analytic"],
                rows: table
                    .rows
                    .iter()
                    .map(|r| {
                        vec![
                            r.rho,
                            r.pair.t,
                            r.pair.g,
                            r.identity.t,
                            r.identity.g,
                            r.displacement.sampled,
                            r.displacement.analytic,
                        ]
                    })
                    .collect(),
            });
            Ok(())
        });
    }
}

const RANDOM_PAIRS: usize = 10_000;
const INEQUALITY_TOL: f64 = 1e-12;

/// Counts `sup |W1 v| + |W2 v| - 2 > 0.5 |W1^T W1 + W2^T W2 - 2I| + tol`.
fn inequality_violations(pairs: impl Iterator<Item = (Mat2, Mat2)>) -> (usize, usize, f64) {
    let (mut n, mut bad, mut worst) = (0, 0, f64::NEG_INFINITY);
    for (w1, w2) in pairs {
        let d = pair_norm_sup(&w1, &w2) - biestim_upper(&w1, &w2);
        worst = worst.max(d);
        if d > INEQUALITY_TOL {
            bad += 1;
        }
        n += 1;
    }
    (n, bad, worst)
}

fn pair_norm_inequality(s: &Scenario, run: &mut Run) {
    run.env("random_pairs", RANDOM_PAIRS);
    run.env("tolerance", INEQUALITY_TOL);
    let mut rng = rng(s.seed);
    let i = Mat2::identity();
    let mut e = || Mat2::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
    let random: Vec<(Mat2, Mat2)> = {
        let mut v = Vec::with_capacity(RANDOM_PAIRS);
        let mut eps_rng = self::rng(s.seed.wrapping_add(1));
        for _ in 0..RANDOM_PAIRS {
            let eps = 10f64.powf(eps_rng.random_range(-4.0..(0.5f64).log10()));
            v.push((i + e() * eps, i + e() * eps));
        }
        v
    };
    let (n, bad, worst) = inequality_violations(random.into_iter());
    run.push(Metric::at_most("violations_random", bad as f64, 0.0));
    run.push(Metric::info("pairs_random", n as f64));
    run.push(Metric::info("worst_excess_random", worst));

    run.attempt("violations_shift", |run| {
        let mut total = (0, 0, f64::NEG_INFINITY);
        for (_, g) in graphs()? {
            for rho in [0.5, 0.1, 0.01] {
                let t = shift_on(&g, rho)?;
                let pairs = [
                    Transform::Shift(t.with_rho(-rho)?),
                    Transform::Identity,
                    Transform::Shift(t.with_rho(0.5 * rho)?),
                ];
                let pts: Vec<Point> = tube_samples(&t, 16)
                    .into_iter()
                    .map(|(a, tau)| g.from_frame(a, g.height(a) + tau))
                    .collect();
                for other in &pairs {
                    let (n, bad, worst) =
                        inequality_violations(pts.iter().map(|&x| (t.lipjac(x), other.lipjac(x))));
                    total = (total.0 + n, total.1 + bad, total.2.max(worst));
                }
            }
        }
        run.push(Metric::at_most("violations_shift", total.1 as f64, 0.0));
        run.push(Metric::info("pairs_shift", total.0 as f64));
        run.push(Metric::info("worst_excess_shift", total.2));
        Ok(())
    });
}

const GAP_ALPHA: f64 = 0.1;
const GAP_RHOS: [f64; 3] = [0.1, 0.01, 0.001];

fn double_lipschitz_tv(run: &mut Run) {
    run.env("alpha", GAP_ALPHA);
    run.env("r", TUBE_R);
    run.env("rho", GAP_RHOS);
    run.attempt("g_ratio", |run| {
        let q = QuadratureSpec::default();
        let reg = RegulariserSpec::tv(GAP_ALPHA)?;
        let flat = flat_graph()?;
        let c = Point::new(0.5, 0.45);
        let arc = LipschitzGraph::circle(Point::new(0.0, 1.0), c, 0.3, 0.2)?;
        let smooth = FunctionalImage::gaussian(Point::new(0.45, 0.55), 0.15, 1.0)
            .plus(&FunctionalImage::linear(Point::new(0.3, -0.2), 0.1))?;
        let cases = [
            ("smooth", smooth.clone(), flat.clone()),
            ("step", FunctionalImage::step(flat.clone(), 1.0, 0.0), flat.clone()),
            ("step-smooth", FunctionalImage::step(flat.clone(), 1.0, 0.0).plus(&smooth)?, flat.clone()),
            ("disk-smooth", FunctionalImage::disk(arc.clone(), c, 0.3, 1.0, 0.0).plus(&smooth)?, arc),
        ];
        let mut rows = Vec::new();
        for (k, (name, u, g)) in cases.iter().enumerate() {
            let gap = |rho: f64| -> Result<_> {
                let t = ShiftTransform::new(g.clone(), mid(g), TUBE_R, rho, Bump::Standard)?;
                let m = t.with_rho(-rho)?;
                double_lip_gap(u, &Transform::Shift(t), &Transform::Shift(m), &reg, q)
            };
            let (mut worst_g, mut lo, mut hi) = (f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
            let mut violations = 0;
            for rho in GAP_RHOS {
                let a = gap(rho)?;
                let b = gap(0.5 * rho)?;
                let two_point = a.lhs / b.lhs;
                worst_g = worst_g.max(a.g_ratio());
                lo = lo.min(two_point);
                hi = hi.max(two_point);
                violations += a.violates_g(1e-6) as usize;
                rows.push(vec![k as f64, rho, a.lhs, a.g_bound, a.t_bound, two_point]);
            }
            run.push(Metric::at_most(format!("g_violations_{name}"), violations as f64, 0.0));
            run.push(Metric::info(format!("max_g_ratio_{name}"), worst_g));
            run.push(Metric::at_least(format!("min_two_point_ratio_{name}"), lo, 3.5));
            run.push(Metric::at_most(format!("max_two_point_ratio_{name}"), hi, 4.5));
        }
        run.tables.push(Table {
            file: "double-lipschitz-tv.csv".into(),
            header: vec!["case", "rho", "lhs", "g_bound", "t_bound", "two_point_ratio"],
            rows,
        });
        Ok(())
    });
}

const MEMBERSHIP_ETAS: [f64; 3] = [0.1, 1.0, 10.0];
const MEMBERSHIP_PAIRS: usize = 100_000;

/// Largest `lhs / rhs` of the paired energy estimate over the tube of the
/// pair `(gamma_rho, gamma_-rho)` and a fan of gradients around `1/eta`.
fn empirical_pair_constant(psi: &EnergyPsi, eta: f64, t: &ShiftTransform) -> Result<f64> {
    let m = t.with_rho(-t.rho())?;
    let g = t.graph();
    let i = Mat2::identity();
    let mut best: f64 = 0.0;
    for (a, tau) in tube_samples(t, 16) {
        let x = g.from_frame(a, g.height(a) + tau);
        let (w1, w2) = (t.lipjac(x), m.lipjac(x));
        let (c, d) = (t.jacobian_det(x), m.jacobian_det(x));
        let (ma, mb) = (w1 / c, w2 / d);
        let k = pair_norm_sup(&w1, &w2)
            + (c + d - 2.0).abs()
            + spectral_norm(&(ma - i)).powi(2)
            + spectral_norm(&(mb - i)).powi(2);
        if k <= 1e-300 {
            continue;
        }
        for dir in 0..8 {
            let th = std::f64::consts::PI * dir as f64 / 8.0;
            for mag in [0.01, 0.1, 0.5, 1.0, 2.0, 10.0, 100.0] {
                let v = crate::linalg::unit(th) * (mag / eta);
                let lhs = c * psi.value((ma * v).norm()) + d * psi.value((mb * v).norm()) - 2.0 * psi.value(v.norm());
                best = best.max(lhs / (k * v.norm()));
            }
        }
    }
    Ok(best)
}

fn huber_membership(s: &Scenario, run: &mut Run) {
    run.env("eta", MEMBERSHIP_ETAS);
    run.env("pairs", MEMBERSHIP_PAIRS);
    let rhos: Vec<f64> = (3..=8).map(|k| 0.5f64.powi(k)).collect();
    run.env("rho", &rhos);
    let mut rng = rng(s.seed);
    let mut rows = Vec::new();
    for eta in MEMBERSHIP_ETAS {
        run.attempt(&format!("violations_eta_{eta}"), |run| {
            let psi = huber_psi(eta)?;
            let k = 1.0 / eta;
            // Log-uniform over six decades around the kink, plus exact kinks.
            let mut draw = || {
                if rng.random_range(0.0..1.0) < 0.05 {
                    k
                } else {
                    k * 10f64.powf(rng.random_range(-3.0..3.0))
                }
            };
            let samples: Vec<(f64, f64)> = (0..MEMBERSHIP_PAIRS).map(|_| (draw(), draw())).collect();
            let bad = check_psi_membership(&psi, &samples)?;
            run.push(Metric::at_most(format!("violations_eta_{eta}"), bad.len() as f64, 0.0));

            let g = flat_graph()?;
            let mut cs = Vec::new();
            for &rho in &rhos {
                let c = empirical_pair_constant(&psi, eta, &shift_on(&g, rho)?)?;
                rows.push(vec![eta, rho, c]);
                cs.push(c);
            }
            let hi = cs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lo = cs.iter().copied().fold(f64::INFINITY, f64::min);
            run.push(Metric::info(format!("pair_constant_max_eta_{eta}"), hi));
            run.push(Metric::at_most(format!("pair_constant_spread_eta_{eta}"), hi / lo, 2.0));
            Ok(())
        });
    }
    run.tables.push(Table {
        file: "huber-membership.csv".into(),
        header: vec!["eta", "rho", "pair_constant"],
        rows,
    });
}

const TRANSPORT_IMAGES: usize = 20;
const TRANSPORT_RHO: f64 = 0.3;
const TRANSPORT_R: f64 = 0.125;

fn random_smooth_image(rng: &mut ChaCha8Rng) -> Result<FunctionalImage> {
    let mut img = FunctionalImage::linear(Point::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)), 0.0);
    for _ in 0..3 {
        let g = FunctionalImage::gaussian(
            Point::new(rng.random_range(0.3..0.7), rng.random_range(0.3..0.7)),
            rng.random_range(0.05..0.2),
            rng.random_range(-1.0..1.0),
        );
        img = img.plus(&g)?;
    }
    Ok(img)
}

fn transport_estimate(s: &Scenario, run: &mut Run) {
    let n = s.resolution.unwrap_or(256);
    run.env("resolution", [n, 2 * n]);
    run.env("images", TRANSPORT_IMAGES);
    run.env("rho", TRANSPORT_RHO);
    run.env("r", TRANSPORT_R);
    let mut rng = rng(s.seed);
    run.attempt("max_ratio", |run| {
        let (mut worst, mut not_shrinking) = (0.0f64, 0usize);
        let mut rows = Vec::new();
        for k in 0..TRANSPORT_IMAGES {
            let img = random_smooth_image(&mut rng)?;
            // Alternate the normal axis; the tube is aligned with the grid
            // so its cells are whole.
            let (z, a0) = if k % 2 == 0 { (Point::new(0.0, 1.0), 0.5) } else { (Point::new(1.0, 0.0), -0.5) };
            let g = LipschitzGraph::flat(z, 0.5, a0, 0.3)?;
            let t = ShiftTransform::new(g, a0, TRANSPORT_R, TRANSPORT_RHO, Bump::Standard)?;
            let limit = transport_quadrature(&img, &t, QuadratureSpec { panels: 64, order: 8 })?;
            let limit_ratio = limit.integral / limit.bound;
            let coarse = transport_check(&img.rasterise(n)?, &t)?;
            let fine = transport_check(&img.rasterise(2 * n)?, &t)?;
            let (rc, rf) = (coarse.integral / coarse.bound, fine.integral / fine.bound);
            worst = worst.max(rc);
            let (dc, df) = ((rc - limit_ratio).abs(), (rf - limit_ratio).abs());
            if df >= dc {
                not_shrinking += 1;
            }
            rows.push(vec![k as f64, coarse.integral, coarse.bound, rc, rf, limit_ratio, dc, df]);
        }
        run.push(Metric::at_most("max_ratio", worst, 1.05));
        run.push(Metric::at_most("slack_not_shrinking", not_shrinking as f64, 0.0));
        run.tables.push(Table {
            file: "transport-estimate.csv".into(),
            header: vec!["image", "integral", "bound", "ratio", "ratio_fine", "ratio_limit", "deviation", "deviation_fine"],
            rows,
        });
        Ok(())
    });
}

fn wedge(s: &Scenario, run: &mut Run) {
    let n = s.resolution.unwrap_or(512);
    run.env("resolution", n);
    run.env("r", TUBE_R);
    run.attempt("wedge_rel_error", |run| {
        for (gname, g) in graphs()? {
            for rho in [0.2, -0.2] {
                let t = shift_on(&g, rho)?;
                let w = wedge_area(&t, n);
                let sign = if rho > 0.0 { "pos" } else { "neg" };
                run.push(Metric::rel_within(format!("wedge_area_{gname}_{sign}"), w.pixel_count, w.analytic, 0.02));
            }
        }
        Ok(())
    });
}

const CONTAINMENT_ALPHA: f64 = 0.01;
const CONTAINMENT_HUBER_ETA: f64 = 10.0;
const CONTAINMENT_ITERATIONS: usize = 3000;
const CONTAINMENT_EXCESS: f64 = 0.02;

fn containment(s: &Scenario, run: &mut Run, reg: RegulariserSpec, p: f64) {
    let n = s.resolution.unwrap_or(256);
    let (fid, reg) = match &s.model {
        Some(m) => (m.fidelity, m.regulariser.clone()),
        None => match FidelitySpec::power(p, 1.0) {
            Ok(f) => (f, reg),
            Err(e) => return run.push(Metric::failed("model", &e)),
        },
    };
    let phantoms: Vec<PhantomSpec> = match s.phantom {
        Some(ph) => vec![ph],
        None => ["square", "disk", "checkerboard"]
            .iter()
            .map(|k| PhantomSpec {
                kind: PhantomKind::parse(k).expect("built-in phantom"),
                size: n,
                noise: Noise::None,
                seed: s.seed,
            })
            .collect(),
    };
    let cfg = SolverConfig {
        max_iterations: CONTAINMENT_ITERATIONS,
        ..SolverConfig::default()
    };
    run.env("model", ModelSpec { fidelity: fid, regulariser: reg.clone() });
    run.env("phantoms", &phantoms);
    run.env("solver", cfg);
    run.env("window", DEFAULT_WINDOW);
    run.env("dilation", 1);
    for ph in phantoms {
        let label = phantom_label(&ph.kind);
        run.attempt(&format!("containment_excess_{label}"), |run| {
            let f = generate_phantom(&ph)?;
            let theta = default_threshold(&f);
            let jf = detect_jumps(&f, DEFAULT_WINDOW, theta)?;
            let sol = solve_denoise(&f, &fid, &reg, &cfg)?;
            let ju = detect_jumps(&sol.solution, DEFAULT_WINDOW, theta)?;
            run.push(Metric::at_most(
                format!("containment_excess_{label}"),
                containment_excess(&ju, &jf, 1)?,
                CONTAINMENT_EXCESS,
            ));
            run.push(Metric::at_least(format!("jumps_kept_{label}"), ju.len() as f64, 1.0));
            run.push(Metric::info(format!("solver_residual_{label}"), sol.residual));
            run.images.push((format!("{}-{label}.pgm", s.name), sol.solution));
            Ok(())
        });
    }
}

fn phantom_label(k: &PhantomKind) -> &'static str {
    match k {
        PhantomKind::HalfPlane { .. } => "half-plane",
        PhantomKind::Square { .. } => "square",
        PhantomKind::Disk { .. } => "disk",
        PhantomKind::Checkerboard { .. } => "checkerboard",
        PhantomKind::SmoothBump { .. } => "smooth-bump",
    }
}

const CORNER_ALPHAS: [f64; 2] = [0.02, 0.04];
const CORNER_SIDE: f64 = 0.6;

fn corner_rounding(s: &Scenario, run: &mut Run) {
    let n = s.resolution.unwrap_or(256);
    let cfg = SolverConfig {
        max_iterations: 200_000,
        tolerance: 1e-7,
        ..SolverConfig::default()
    };
    run.env("resolution", n);
    run.env("side", CORNER_SIDE);
    run.env("solver", cfg);
    let spec = PhantomSpec {
        kind: PhantomKind::Square { side: CORNER_SIDE },
        size: n,
        noise: Noise::None,
        seed: s.seed,
    };
    for alpha in CORNER_ALPHAS {
        run.attempt(&format!("corner_radius_alpha_{alpha}"), |run| {
            let f = generate_phantom(&spec)?;
            let fid = FidelitySpec::power(1.0, 1.0)?;
            let sol = solve_denoise(&f, &fid, &RegulariserSpec::tv(alpha)?, &cfg)?;
            let u = &sol.solution;
            let (lo, hi) = (0.5 - 0.5 * CORNER_SIDE, 0.5 + 0.5 * CORNER_SIDE);
            let mut radii = Vec::new();
            for c in [(lo, lo), (lo, hi), (hi, lo), (hi, hi)] {
                radii.push(corner_cut_radius(&f, u, Point::new(c.0, c.1), 2.0 * alpha)?);
            }
            let mean = radii.iter().sum::<f64>() / 4.0;
            run.push(Metric::rel_within(format!("corner_radius_alpha_{alpha}"), mean, alpha, 0.15));
            for (k, r) in radii.iter().enumerate() {
                run.push(Metric::info(format!("corner_radius_alpha_{alpha}_corner_{k}"), *r));
            }
            let rep = level_line_curvature(u, 0.5, alpha)?;
            // Edge points at least three radii from either corner.
            let keep = |p: Point| (p.x - 0.5).abs().min((p.y - 0.5).abs()) < 0.5 * CORNER_SIDE - 3.0 * alpha;
            let kmax = rep.max_curvature_on(keep).ok_or(Error::EmptyContour(0.5))?;
            run.push(Metric::at_most(format!("edge_curvature_alpha_{alpha}"), kmax, 0.1 / alpha));
            run.images.push((format!("corner-rounding-l1-alpha-{alpha}.pgm"), sol.solution));
            Ok(())
        });
    }
}

fn graph_mean_curvature(run: &mut Run) {
    let spacings = [2e-3, 1e-3, 5e-4];
    run.env("spacing", spacings);
    let mut rows = Vec::new();
    for radius in [1.0f64, 0.5] {
        run.attempt(&format!("rel_error_radius_{radius}"), |run| {
            let mut errs = Vec::new();
            for h in spacings {
                // Upper arc over half a radius on either side of the top.
                let m = (0.5 * radius / h).round() as i64;
                let f: Vec<f64> = (-m..=m).map(|k| (radius * radius - (k as f64 * h).powi(2)).sqrt()).collect();
                let k = mean_curvature_of_graph(&f, h)?;
                let e = k.iter().map(|k| (k * radius - 1.0).abs()).fold(0.0, f64::max);
                rows.push(vec![radius, h, e]);
                errs.push(e);
            }
            run.push(Metric::at_most(format!("rel_error_radius_{radius}"), errs[1], 0.01));
            for (k, w) in errs.windows(2).enumerate() {
                run.push(Metric::in_range(format!("convergence_factor_radius_{radius}_{k}"), w[0] / w[1], 3.0, 5.0));
            }
            Ok(())
        });
    }
    run.tables.push(Table {
        file: "graph-mean-curvature.csv".into(),
        header: vec!["radius", "spacing", "max_rel_error"],
        rows,
    });
}

const RCURV_ALPHA: f64 = 0.05;
const RCURV_R: f64 = 0.02;
const RCURV_RHO: f64 = 0.01;

fn r_curvature_circle(run: &mut Run) {
    run.env("alpha", RCURV_ALPHA);
    run.env("r", RCURV_R);
    run.env("rho", RCURV_RHO);
    for radius in [0.2, 0.3] {
        for lambda in [1.0, 2.0] {
            let name = format!("r_curvature_R_{radius}_lambda_{lambda}");
            run.attempt(&name, |run| {
                let c = Point::new(0.5, 0.5);
                let g = LipschitzGraph::circle(Point::new(0.0, 1.0), c, radius, 0.5 * radius)?;
                let u = FunctionalImage::disk(g.clone(), c, radius, lambda, 0.0);
                let reg = RegulariserSpec::tv(RCURV_ALPHA)?;
                let t = ShiftTransform::new(g.clone(), g.to_frame(c).0, RCURV_R, RCURV_RHO, Bump::Standard)?;
                let e = r_curvature_estimate(&u, &t, &reg, QuadratureSpec::default())?;
                run.push(Metric::rel_within(&name, e.estimate, RCURV_ALPHA * lambda / radius, 0.10));
                run.push(Metric::info(format!("{name}_raw"), e.at_rho));
                Ok(())
            });
        }
    }
}

const ORACLE_ALPHA: f64 = 0.05;

fn oracle_equivalence(s: &Scenario, run: &mut Run) {
    let cfg = SolverConfig {
        max_iterations: 200_000,
        tolerance: 1e-7,
        ..SolverConfig::default()
    };
    run.env("alpha", ORACLE_ALPHA);
    run.env("solver", cfg);
    let mut rng = rng(s.seed);
    let mut rows = Vec::new();
    for n in [8usize, 16] {
        let f = match GridImage::new(n, n, 1.0 / n as f64, (0..n * n).map(|_| rng.random_range(0.0..1.0)).collect()) {
            Ok(f) => f,
            Err(e) => return run.push(Metric::failed("objective_gap", &e)),
        };
        for p in [1.0, 1.5, 2.0] {
            for (rname, eta) in [("tv", None), ("huber-0.1", Some(0.1)), ("huber-10", Some(10.0))] {
                let name = format!("n{n}_p{p}_{rname}");
                run.attempt(&format!("objective_gap_{name}"), |run| {
                    let fid = FidelitySpec::power(p, 1.0)?;
                    let reg = match eta {
                        None => RegulariserSpec::tv(ORACLE_ALPHA)?,
                        Some(eta) => RegulariserSpec::huber(eta, ORACLE_ALPHA)?,
                    };
                    let fast = solve_denoise(&f, &fid, &reg, &cfg)?;
                    let exact = oracle_solve(&f, &fid, &reg)?;
                    let e_fast = objective_value(&fast.solution, &f, &fid, &reg)?;
                    let e_exact = objective_value(&exact.solution, &f, &fid, &reg)?;
                    let gap = (e_fast - e_exact).abs() / e_exact.abs();
                    run.push(Metric::at_most(format!("objective_gap_{name}"), gap, 1e-6));
                    if p > 1.0 {
                        let range = f.max() - f.min();
                        let out = (f.min() - fast.solution.min()).max(fast.solution.max() - f.max()).max(0.0);
                        run.push(Metric::at_most(format!("max_principle_{name}"), out, 1e-6 * range));
                    }
                    rows.push(vec![n as f64, p, eta.unwrap_or(0.0), e_fast, e_exact, gap]);
                    Ok(())
                });
            }
        }
    }
    run.tables.push(Table {
        file: "oracle-equivalence.csv".into(),
        header: vec!["size", "p", "eta", "objective", "oracle_objective", "rel_gap"],
        rows,
    });
}

fn constant_image(s: &Scenario, run: &mut Run) {
    let n = s.resolution.unwrap_or(32);
    run.env("resolution", n);
    run.attempt("solution_change", |run| {
        let f = GridImage::constant(n, n, 1.0 / n as f64, 0.5)?;
        let sol = solve_denoise(&f, &FidelitySpec::power(2.0, 1.0)?, &RegulariserSpec::tv(0.1)?, &SolverConfig::default())?;
        let change = sol.solution.values().iter().zip(f.values()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        run.push(Metric::at_most("solution_change", change, 0.0));
        run.push(Metric::at_most("iterations", sol.iterations as f64, 0.0));
        run.push(Metric::at_most("total_variation", total_variation(&sol.solution), 0.0));
        let jumps = detect_jumps(&sol.solution, DEFAULT_WINDOW, 0.1)?;
        run.push(Metric::at_most("jump_count", jumps.len() as f64, 0.0));
        Ok(())
    });
}

fn coarea_nested(s: &Scenario, run: &mut Run) {
    let n = s.resolution.unwrap_or(128);
    run.env("resolution", n);
    let h = 1.0 / n as f64;
    let c = Point::new(0.5, 0.5);
    let weights = [1.0, 0.5, 2.0];
    type Shape = Box<dyn Fn(Point) -> bool>;
    let families: [(&str, Vec<Shape>); 2] = [
        (
            "disks",
            [0.4, 0.28, 0.15]
                .into_iter()
                .map(|r| Box::new(move |x: Point| (x - c).norm() < r) as Shape)
                .collect(),
        ),
        (
            "squares",
            [0.8, 0.5, 0.2]
                .into_iter()
                .map(|side| Box::new(move |x: Point| (x - c).amax() < 0.5 * side) as Shape)
                .collect(),
        ),
    ];
    for (fname, sets) in families {
        run.attempt(&format!("coarea_rel_error_{fname}"), |run| {
            let masks: Vec<Mask> = sets.iter().map(|p| Mask::from_fn(n, n, h, p)).collect();
            let u = GridImage::from_fn(n, n, h, |x| sets.iter().zip(weights).map(|(p, w)| if p(x) { w } else { 0.0 }).sum())?;
            let mut sum = 0.0;
            for (m, w) in masks.iter().zip(weights) {
                sum += w * perimeter(m, h)?;
            }
            let tv = total_variation(&u);
            run.push(Metric::at_most(format!("coarea_rel_error_{fname}"), (tv - sum).abs() / sum, 1e-12));
            Ok(())
        });
    }
}

/// Non-built-in names: solve the scenario's phantom with its model.
fn custom_solve(s: &Scenario, run: &mut Run) -> Result<()> {
    let (Some(ph), Some(model)) = (&s.phantom, &s.model) else {
        return Err(Error::Unknown {
            what: "scenario (custom scenarios need a phantom and a model)",
            name: s.name.clone(),
        });
    };
    let mut ph = *ph;
    if let Some(n) = s.resolution {
        ph.size = n;
    }
    let cfg = SolverConfig {
        seed: s.seed,
        ..SolverConfig::default()
    };
    run.env("phantom", ph);
    run.env("model", model);
    run.env("solver", cfg);
    run.attempt("objective", |run| {
        let f = generate_phantom(&ph)?;
        let sol = solve_denoise(&f, &model.fidelity, &model.regulariser, &cfg)?;
        run.push(Metric::info("objective", objective_value(&sol.solution, &f, &model.fidelity, &model.regulariser)?));
        run.push(Metric::at_most("residual", sol.residual, cfg.tolerance));
        run.push(Metric::info("iterations", sol.iterations as f64));
        run.images.push((format!("{}-data.pgm", s.name), f));
        run.images.push((format!("{}-solution.pgm", s.name), sol.solution));
        Ok(())
    });
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn every_builtin_maps_to_a_criterion() {
        let mut seen: Vec<u32> = BUILTINS.iter().map(|b| b.1).collect();
        seen.sort_unstable();
        seen.dedup();
        assert_eq!(seen, (1..=14).collect::<Vec<_>>());
        assert!(Scenario::builtin("no-such-thing").is_err());
    }

    #[test]
    fn constant_image_passes_with_zero_metrics() {
        let r = run_scenario(&Scenario::builtin("constant-image").unwrap()).unwrap();
        assert!(r.passed);
        assert!(r.metrics.iter().all(|m| m.value == 0.0));
    }

    #[test]
    fn replay_is_byte_identical_and_guarded() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = Scenario::builtin("graph-mean-curvature").unwrap();
        s.out_dir = Some(dir.path().to_path_buf());
        let a = run_scenario(&s).unwrap();
        let first = std::fs::read(dir.path().join("graph-mean-curvature.json")).unwrap();
        assert!(run_scenario(&s).is_err());
        s.force = true;
        let b = run_scenario(&s).unwrap();
        assert_eq!(a, b);
        assert_eq!(first, std::fs::read(dir.path().join("graph-mean-curvature.json")).unwrap());
        assert!(dir.path().join("graph-mean-curvature.csv").exists());
    }

    #[test]
    fn failed_metric_is_recorded() {
        let mut s = Scenario::builtin("jump-containment-rof").unwrap();
        s.phantom = Some(PhantomSpec {
            kind: PhantomKind::Disk { radius: 2.0 },
            size: 16,
            noise: Noise::None,
            seed: 0,
        });
        let r = run_scenario(&s).unwrap();
        assert!(!r.passed);
        assert!(r.metrics[0].error.is_some());
        let json = r.to_json().unwrap();
        assert!(json.contains("\"value\": null"));
    }

    #[test]
    fn custom_scenario_needs_phantom_and_model() {
        assert!(run_scenario(&Scenario::named("mine")).is_err());
        let mut s = Scenario::named("mine");
        s.phantom = Some(PhantomSpec {
            kind: PhantomKind::Disk { radius: 0.3 },
            size: 16,
            noise: Noise::Gaussian { sigma: 0.05 },
            seed: 3,
        });
        s.model = Some(ModelSpec::from_json(r#"{"fidelity":{"p":2},"regulariser":{"kind":"tv","alpha":0.05}}"#).unwrap());
        let r = run_scenario(&s).unwrap();
        assert!(r.passed, "{r:?}");
        assert!(r.metric("objective").unwrap().value > 0.0);
    }

    #[test]
    fn jsonl_appends_one_line_per_report() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("suite.jsonl");
        let r = run_scenario(&Scenario::builtin("constant-image").unwrap()).unwrap();
        append_jsonl(&p, &r).unwrap();
        append_jsonl(&p, &r).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert_eq!(text.lines().count(), 2);
        let v: Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
        assert_eq!(v["scenario"], json!("constant-image"));
    }
}
