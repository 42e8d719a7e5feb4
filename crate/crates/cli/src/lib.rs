//! Command-line front end. Every subcommand returns a JSON summary that is
//! printed as `key: value` lines, or verbatim with `--json`.

pub mod plot;

use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use jumpset_core::curvature::{extract_contours, level_line_curvature, r_curvature_estimate};
use jumpset_core::experiments::{append_jsonl, run_scenario, Report, Scenario, BUILTINS};
use jumpset_core::io::{guard_overwrite, read_pgm, write_bytes, write_csv, write_pgm, PgmFormat};
use jumpset_core::jumps::{containment_excess, detect_jumps};
use jumpset_core::pushforward::{double_lip_gap, transport_check, transport_quadrature, wedge_area, FunctionalImage, QuadratureSpec};
use jumpset_core::shift::{comparison_constants, scaling_sweep, Bump, LipschitzGraph, ShiftTransform, Transform};
use jumpset_core::solvers::{objective_value, solve_denoise, SolverConfig};
use jumpset_core::{generate_phantom, FidelitySpec, ModelSpec, Noise, PhantomKind, PhantomSpec, Point, RegulariserSpec};
use serde_json::{json, Value};

#[derive(Debug, Parser)]
#[command(name = "jumpset", version, about = "Denoising solvers and shift-transformation experiments")]
pub struct Cli {
    /// Seed for every random draw.
    #[arg(long, global = true, default_value_t = 1)]
    pub seed: u64,
    /// Grid side; each command has its own default.
    #[arg(long, global = true)]
    pub resolution: Option<usize>,
    /// Directory for relative output paths.
    #[arg(long, global = true, default_value = ".")]
    pub out_dir: PathBuf,
    /// Overwrite existing outputs.
    #[arg(long, global = true)]
    pub force: bool,
    /// Print the summary as JSON.
    #[arg(long, global = true)]
    pub json: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum GraphArg {
    Flat,
    Circle,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum PairArg {
    /// `(gamma_rho, gamma_-rho)`.
    Minus,
    /// `(gamma_rho, identity)`.
    Identity,
    /// `(gamma_rho, gamma_rho/2)`.
    Half,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum RegArg {
    Tv,
    Huber,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ImageArg {
    /// Gaussian plus a linear ramp.
    Smooth,
    /// Unit step across the flat interface.
    Step,
    /// Disk indicator plus the smooth image.
    Disk,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Denoise a PGM or a phantom.
    Solve {
        #[arg(long)]
        input: Option<PathBuf>,
        /// half-plane, square, disk, checkerboard or smooth-bump.
        #[arg(long, conflicts_with = "input")]
        phantom: Option<String>,
        #[arg(long, default_value_t = 0.0)]
        noise_sigma: f64,
        /// Model JSON; overrides --p/--regulariser/--alpha/--eta.
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long, default_value_t = 2.0)]
        p: f64,
        #[arg(long, value_enum, default_value_t = RegArg::Tv)]
        regulariser: RegArg,
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
        #[arg(long, default_value_t = 1.0)]
        eta: f64,
        #[arg(long, default_value_t = 20_000)]
        max_iterations: usize,
        #[arg(long, default_value_t = 1e-5)]
        tolerance: f64,
        #[arg(long, default_value = "solution.pgm")]
        out: PathBuf,
        /// Also write the input image, handy for `jumps --data`.
        #[arg(long)]
        save_data: Option<PathBuf>,
        /// PNG with f, u and |u - f| side by side.
        #[arg(long)]
        panel: Option<PathBuf>,
    },
    /// Comparison constants of a shift pair, or a sweep over rho.
    Constants {
        #[arg(long, value_enum, default_value_t = GraphArg::Flat)]
        graph: GraphArg,
        #[arg(long, default_value_t = 0.1)]
        r: f64,
        #[arg(long, default_value_t = 0.1, allow_negative_numbers = true)]
        rho: f64,
        #[arg(long, value_enum, default_value_t = PairArg::Minus)]
        pair: PairArg,
        #[arg(long, default_value_t = 64)]
        density: usize,
        /// Sweep rho = 2^-3 .. 2^-10 and write CSV and a log-log plot.
        #[arg(long)]
        sweep: bool,
    },
    /// Paired-shift regulariser gap against its G and T bounds.
    Doublelip {
        #[arg(long, value_enum, default_value_t = ImageArg::Smooth)]
        image: ImageArg,
        #[arg(long, default_value_t = 0.1)]
        alpha: f64,
        #[arg(long, default_value_t = 0.1)]
        r: f64,
        #[arg(long, default_value_t = 0.01)]
        rho: f64,
    },
    /// Transport estimate on a seeded random smooth image.
    Transport {
        #[arg(long, default_value_t = 0.3, allow_negative_numbers = true)]
        rho: f64,
        #[arg(long, default_value_t = 0.125)]
        r: f64,
    },
    /// Area between an interface and its shifted copy.
    Wedge {
        #[arg(long, value_enum, default_value_t = GraphArg::Flat)]
        graph: GraphArg,
        #[arg(long, default_value_t = 0.2, allow_negative_numbers = true)]
        rho: f64,
        #[arg(long, default_value_t = 0.1)]
        r: f64,
    },
    /// Jump sets of a solution and its data, and their containment.
    Jumps {
        #[arg(long)]
        solution: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Threshold as a fraction of the data range.
        #[arg(long, default_value_t = 0.25)]
        theta: f64,
        #[arg(long, default_value_t = 3)]
        window: usize,
        #[arg(long, default_value_t = 1)]
        dilate: usize,
        #[arg(long, default_value = "jumps.json")]
        out: PathBuf,
    },
    /// Level-line curvature of an image.
    Curvature {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = 0.5)]
        level: f64,
        /// Arc length of the circle-fit window.
        #[arg(long, default_value_t = 0.05)]
        window: f64,
        #[arg(long, default_value = "curvature.csv")]
        out: PathBuf,
        /// PNG with the level line drawn over the image.
        #[arg(long)]
        overlay: Option<PathBuf>,
    },
    /// R-curvature of a disk interface against alpha lambda / R.
    Rcurv {
        #[arg(long, default_value_t = 0.2)]
        radius: f64,
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
        #[arg(long, default_value_t = 0.02)]
        r: f64,
        #[arg(long, default_value_t = 0.01)]
        rho: f64,
        /// Jump height of the disk.
        #[arg(long, default_value_t = 1.0)]
        lambda: f64,
    },
    /// Run the built-in acceptance scenarios.
    Suite {
        /// Run only these scenarios.
        #[arg(long, num_args = 1..)]
        only: Vec<String>,
        /// Also write log-log PNGs of the scaling tables.
        #[arg(long)]
        plots: bool,
    },
}

/// Outcome of a command: a summary to print and whether every check passed.
pub struct Outcome {
    pub summary: Value,
    pub ok: bool,
}

impl Outcome {
    fn ok(summary: Value) -> Self {
        Self { summary, ok: true }
    }
}

fn out_path(cli: &Cli, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        cli.out_dir.join(p)
    }
}

fn graph(g: GraphArg) -> Result<LipschitzGraph> {
    Ok(match g {
        GraphArg::Flat => LipschitzGraph::flat(Point::new(0.0, 1.0), 0.5, 0.5, 0.3)?,
        GraphArg::Circle => LipschitzGraph::circle(Point::new(0.6, 0.8), Point::new(0.45, 0.3), 0.3, 0.2)?,
    })
}

fn centred_shift(g: &LipschitzGraph, r: f64, rho: f64) -> Result<ShiftTransform> {
    let (lo, hi) = g.domain();
    Ok(ShiftTransform::new(g.clone(), 0.5 * (lo + hi), r, rho, Bump::Standard)?)
}

pub fn run(cli: &Cli) -> Result<Outcome> {
    match &cli.command {
        Command::Solve {
            input,
            phantom,
            noise_sigma,
            model,
            p,
            regulariser,
            alpha,
            eta,
            max_iterations,
            tolerance,
            out,
            save_data,
            panel,
        } => {
            let f = match input {
                Some(path) => read_pgm(path).with_context(|| format!("reading {}", path.display()))?,
                None => {
                    let noise = if *noise_sigma > 0.0 { Noise::Gaussian { sigma: *noise_sigma } } else { Noise::None };
                    generate_phantom(&PhantomSpec {
                        kind: PhantomKind::parse(phantom.as_deref().unwrap_or("disk"))?,
                        size: cli.resolution.unwrap_or(128),
                        noise,
                        seed: cli.seed,
                    })?
                }
            };
            let model = match model {
                Some(path) => ModelSpec::from_json(&std::fs::read_to_string(path)?)?,
                None => ModelSpec {
                    fidelity: FidelitySpec::power(*p, 1.0)?,
                    regulariser: match regulariser {
                        RegArg::Tv => RegulariserSpec::tv(*alpha)?,
                        RegArg::Huber => RegulariserSpec::huber(*eta, *alpha)?,
                    },
                },
            };
            let out = out_path(cli, out);
            let panel = panel.as_ref().map(|p| out_path(cli, p));
            let save_data = save_data.as_ref().map(|p| out_path(cli, p));
            for p in std::iter::once(&out).chain(&panel).chain(&save_data) {
                guard_overwrite(p, cli.force)?;
            }
            let cfg = SolverConfig {
                max_iterations: *max_iterations,
                tolerance: *tolerance,
                seed: cli.seed,
                ..SolverConfig::default()
            };
            let res = solve_denoise(&f, &model.fidelity, &model.regulariser, &cfg)?;
            let objective = objective_value(&res.solution, &f, &model.fidelity, &model.regulariser)?;
            write_pgm(&out, &res.solution, PgmFormat::Binary, 65535, cli.force)?;
            if let Some(p) = &save_data {
                write_pgm(p, &f, PgmFormat::Binary, 65535, cli.force)?;
            }
            if let Some(p) = &panel {
                let diff = res.solution.with_values(
                    res.solution.values().iter().zip(f.values()).map(|(a, b)| (a - b).abs()).collect(),
                );
                plot::image_panel(&[("f", &f), ("u", &res.solution), ("|u-f|", &diff)], p, cli.force)?;
            }
            Ok(Outcome {
                ok: res.converged,
                summary: json!({
                    "model": model,
                    "iterations": res.iterations,
                    "converged": res.converged,
                    "residual": res.residual,
                    "objective": objective,
                    "output": out,
                }),
            })
        }
        Command::Constants {
            graph: g,
            r,
            rho,
            pair,
            density,
            sweep,
        } => {
            let g = graph(*g)?;
            if *sweep {
                let (lo, hi) = g.domain();
                let rhos: Vec<f64> = (3..=10).map(|k| 0.5f64.powi(k)).collect();
                let table = scaling_sweep(&g, 0.5 * (lo + hi), *r, &Bump::Standard, &rhos, *density)?;
                let csv = out_path(cli, Path::new("constants-sweep.csv"));
                let png = out_path(cli, Path::new("constants-sweep.png"));
                guard_overwrite(&csv, cli.force)?;
                guard_overwrite(&png, cli.force)?;
                let rows: Vec<Vec<f64>> =
                    table.rows.iter().map(|row| vec![row.rho, row.pair.t, row.identity.t]).collect();
                write_csv(&csv, &["rho", "t_pair", "t_identity"], &rows, cli.force)?;
                plot::loglog_from_csv(&csv, "rho", &["t_pair", "t_identity"], &png, cli.force)?;
                return Ok(Outcome::ok(json!({
                    "pair_slope": table.pair_slope,
                    "identity_slope": table.identity_slope,
                    "csv": csv,
                    "plot": png,
                })));
            }
            let t = centred_shift(&g, *r, *rho)?;
            let other = match pair {
                PairArg::Minus => Transform::Shift(t.with_rho(-rho)?),
                PairArg::Identity => Transform::Identity,
                PairArg::Half => Transform::Shift(t.with_rho(0.5 * rho)?),
            };
            let c = comparison_constants(&Transform::Shift(t), &other, *density);
            Ok(Outcome::ok(serde_json::to_value(c)?))
        }
        Command::Doublelip { image, alpha, r, rho } => {
            let flat = graph(GraphArg::Flat)?;
            let smooth = FunctionalImage::gaussian(Point::new(0.45, 0.55), 0.15, 1.0)
                .plus(&FunctionalImage::linear(Point::new(0.3, -0.2), 0.1))?;
            let (u, g) = match image {
                ImageArg::Smooth => (smooth, flat),
                ImageArg::Step => (FunctionalImage::step(flat.clone(), 1.0, 0.0), flat),
                ImageArg::Disk => {
                    let c = Point::new(0.5, 0.45);
                    let arc = LipschitzGraph::circle(Point::new(0.0, 1.0), c, 0.3, 0.2)?;
                    (FunctionalImage::disk(arc.clone(), c, 0.3, 1.0, 0.0).plus(&smooth)?, arc)
                }
            };
            let reg = RegulariserSpec::tv(*alpha)?;
            let q = QuadratureSpec::default();
            let gap = |rho: f64| -> Result<_> {
                let t = centred_shift(&g, *r, rho)?;
                let m = t.with_rho(-rho)?;
                Ok(double_lip_gap(&u, &Transform::Shift(t), &Transform::Shift(m), &reg, q)?)
            };
            let a = gap(*rho)?;
            let b = gap(0.5 * rho)?;
            Ok(Outcome {
                ok: !a.violates_g(1e-6),
                summary: json!({
                    "lhs": a.lhs,
                    "du": a.du,
                    "g_bound": a.g_bound,
                    "t_bound": a.t_bound,
                    "g_ratio": a.g_ratio(),
                    "t_ratio": a.t_ratio(),
                    "two_point_ratio": a.lhs / b.lhs,
                }),
            })
        }
        Command::Transport { rho, r } => {
            let n = cli.resolution.unwrap_or(256);
            let img = random_smooth_image(cli.seed)?;
            let g = graph(GraphArg::Flat)?;
            let t = ShiftTransform::new(g, 0.5, *r, *rho, Bump::Standard)?;
            let grid = transport_check(&img.rasterise(n)?, &t)?;
            let limit = transport_quadrature(&img, &t, QuadratureSpec { panels: 64, order: 8 })?;
            Ok(Outcome {
                ok: grid.integral <= 1.05 * grid.bound,
                summary: json!({
                    "resolution": n,
                    "integral": grid.integral,
                    "bound": grid.bound,
                    "ratio": grid.integral / grid.bound,
                    "quadrature_ratio": limit.integral / limit.bound,
                }),
            })
        }
        Command::Wedge { graph: g, rho, r } => {
            let n = cli.resolution.unwrap_or(512);
            let t = centred_shift(&graph(*g)?, *r, *rho)?;
            let w = wedge_area(&t, n);
            let rel = (w.pixel_count - w.analytic).abs() / w.analytic;
            Ok(Outcome {
                ok: rel <= 0.02,
                summary: json!({ "analytic": w.analytic, "rasterised": w.pixel_count, "rel_error": rel }),
            })
        }
        Command::Jumps {
            solution,
            data,
            theta,
            window,
            dilate,
            out,
        } => {
            let u = read_pgm(solution).with_context(|| format!("reading {}", solution.display()))?;
            let f = read_pgm(data).with_context(|| format!("reading {}", data.display()))?;
            let threshold = theta * (f.max() - f.min());
            let ju = detect_jumps(&u, *window, threshold)?;
            let jf = detect_jumps(&f, *window, threshold)?;
            let excess = containment_excess(&ju, &jf, *dilate)?;
            let out = out_path(cli, out);
            let doc = json!({ "threshold": threshold, "excess": excess, "dilation": dilate, "solution": ju, "data": jf });
            write_bytes(&out, serde_json::to_string_pretty(&doc)?.as_bytes(), cli.force)?;
            Ok(Outcome::ok(json!({
                "threshold": threshold,
                "solution_jumps": ju.len(),
                "data_jumps": jf.len(),
                "containment_excess": excess,
                "output": out,
            })))
        }
        Command::Curvature {
            input,
            level,
            window,
            out,
            overlay,
        } => {
            let u = read_pgm(input).with_context(|| format!("reading {}", input.display()))?;
            let out = out_path(cli, out);
            let overlay = overlay.as_ref().map(|p| out_path(cli, p));
            guard_overwrite(&out, cli.force)?;
            if let Some(p) = &overlay {
                guard_overwrite(p, cli.force)?;
            }
            let rep = level_line_curvature(&u, *level, *window)?;
            let rows: Vec<Vec<f64>> = rep
                .points
                .iter()
                .zip(&rep.contour)
                .zip(&rep.curvature)
                .map(|((p, c), k)| vec![p.x, p.y, *c as f64, *k])
                .collect();
            write_csv(&out, &["x1", "x2", "contour", "curvature"], &rows, cli.force)?;
            if let Some(p) = &overlay {
                plot::contour_overlay(&u, &extract_contours(&u, *level), p, cli.force)?;
            }
            Ok(Outcome::ok(json!({
                "points": rep.points.len(),
                "radius": rep.radius,
                "output": out,
            })))
        }
        Command::Rcurv {
            radius,
            alpha,
            r,
            rho,
            lambda,
        } => {
            let c = Point::new(0.5, 0.5);
            let g = LipschitzGraph::circle(Point::new(0.0, 1.0), c, *radius, 0.5 * radius)?;
            let u = FunctionalImage::disk(g.clone(), c, *radius, *lambda, 0.0);
            let t = ShiftTransform::new(g.clone(), g.to_frame(c).0, *r, *rho, Bump::Standard)?;
            let e = r_curvature_estimate(&u, &t, &RegulariserSpec::tv(*alpha)?, QuadratureSpec::default())?;
            let expected = alpha * lambda / radius;
            Ok(Outcome::ok(json!({
                "estimate": e.estimate,
                "at_rho": e.at_rho,
                "at_half_rho": e.at_half_rho,
                "expected": expected,
                "rel_error": (e.estimate - expected).abs() / expected,
            })))
        }
        Command::Suite { only, plots } => suite(cli, only, *plots),
    }
}

fn random_smooth_image(seed: u64) -> Result<FunctionalImage> {
    // Linear ramp plus three Gaussians with parameters from a tiny LCG so
    // the CLI needs no RNG crate of its own.
    let mut state = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
    let mut next = |lo: f64, hi: f64| {
        state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        lo + (hi - lo) * ((state >> 11) as f64 / (1u64 << 53) as f64)
    };
    let mut img = FunctionalImage::linear(Point::new(next(-1.0, 1.0), next(-1.0, 1.0)), 0.0);
    for _ in 0..3 {
        let centre = Point::new(next(0.3, 0.7), next(0.3, 0.7));
        img = img.plus(&FunctionalImage::gaussian(centre, next(0.05, 0.2), next(-1.0, 1.0)))?;
    }
    Ok(img)
}

fn suite(cli: &Cli, only: &[String], plots: bool) -> Result<Outcome> {
    for name in only {
        if !BUILTINS.iter().any(|(n, _)| n == name) {
            bail!("unknown scenario `{name}`");
        }
    }
    let jsonl = cli.out_dir.join("suite.jsonl");
    let mut reports: Vec<Report> = Vec::new();
    for (name, _) in BUILTINS.iter().filter(|(n, _)| only.is_empty() || only.iter().any(|o| o == n)) {
        let mut s = Scenario::builtin(name)?;
        s.seed = cli.seed;
        s.resolution = cli.resolution;
        s.out_dir = Some(cli.out_dir.clone());
        s.force = cli.force;
        let report = run_scenario(&s)?;
        append_jsonl(&jsonl, &report)?;
        if !cli.json {
            let _ = writeln!(std::io::stdout(), "{name}: {}", if report.passed { "PASS" } else { "FAIL" });
        }
        reports.push(report);
    }
    let mut plotted = Vec::new();
    if plots {
        for r in &reports {
            for a in &r.artifacts {
                let path = Path::new(a);
                if r.scenario == "comparison-scaling" && path.extension().is_some_and(|e| e == "csv") {
                    let png = path.with_extension("png");
                    plot::loglog_from_csv(path, "rho", &["t_pair", "t_identity"], &png, cli.force)?;
                    plotted.push(png);
                }
            }
        }
    }
    let failed: Vec<&str> = reports.iter().filter(|r| !r.passed).map(|r| r.scenario.as_str()).collect();
    Ok(Outcome {
        ok: failed.is_empty(),
        summary: json!({
            "scenarios": reports.len(),
            "failed": failed,
            "reports": jsonl,
            "plots": plotted,
        }),
    })
}

/// Prints a summary as `key: value` lines or as JSON. A closed stdout (for
/// instance a pipe into `head`) is not an error.
pub fn print_summary(summary: &Value, as_json: bool) {
    let _ = write_summary(&mut std::io::stdout().lock(), summary, as_json);
}

fn write_summary(out: &mut impl Write, summary: &Value, as_json: bool) -> std::io::Result<()> {
    if as_json {
        return writeln!(out, "{}", serde_json::to_string_pretty(summary).unwrap_or_default());
    }
    match summary {
        Value::Object(map) => {
            for (k, v) in map {
                match v {
                    Value::String(s) => writeln!(out, "{k}: {s}")?,
                    other => writeln!(out, "{k}: {other}")?,
                }
            }
            Ok(())
        }
        other => writeln!(out, "{other}"),
    }
}
