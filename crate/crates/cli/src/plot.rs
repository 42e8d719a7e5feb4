//! PNG output: log-log scaling plots with fitted slopes, side-by-side image
//! panels and contour overlays. Text uses the 8x8 bitmap glyphs so no system
//! fonts are needed.

use std::path::Path;

use anyhow::{bail, Context, Result};
use font8x8::{UnicodeFonts, BASIC_FONTS};
use image::{Rgb, RgbImage};
use jumpset_core::curvature::Contour;
use jumpset_core::io::{guard_overwrite, read_csv};
use jumpset_core::shift::loglog_slope;
use jumpset_core::GridImage;
use plotters::prelude::*;

const PALETTE: [(u8, u8, u8); 5] = [(31, 119, 180), (214, 39, 40), (44, 160, 44), (148, 103, 189), (255, 127, 14)];
const WIDTH: u32 = 720;
const HEIGHT: u32 = 540;
const MARGIN: u32 = 60;

/// One curve of a log-log plot.
#[derive(Debug, Clone)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

/// Draws `text` with its top-left corner at `(x, y)`, each glyph pixel
/// scaled to `scale x scale`.
fn draw_text(img: &mut RgbImage, x: u32, y: u32, text: &str, scale: u32, colour: Rgb<u8>) {
    for (k, ch) in text.chars().enumerate() {
        let Some(glyph) = BASIC_FONTS.get(ch) else { continue };
        let x0 = x + k as u32 * 8 * scale;
        for (row, bits) in glyph.iter().enumerate() {
            for col in 0..8 {
                if bits & (1 << col) == 0 {
                    continue;
                }
                for dy in 0..scale {
                    for dx in 0..scale {
                        let (px, py) = (x0 + col * scale + dx, y + row as u32 * scale + dy);
                        if px < img.width() && py < img.height() {
                            img.put_pixel(px, py, colour);
                        }
                    }
                }
            }
        }
    }
}

fn save(img: &RgbImage, out: &Path) -> Result<()> {
    if let Some(dir) = out.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    img.save(out).with_context(|| format!("writing {}", out.display()))
}

fn decade_range(vals: impl Iterator<Item = f64>) -> Option<(f64, f64)> {
    let (lo, hi) = vals.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if !(lo > 0.0 && hi.is_finite()) {
        return None;
    }
    Some((10f64.powf(lo.log10().floor()), 10f64.powf(hi.log10().ceil()).max(lo * 10.0)))
}

/// Log-log plot of each series with its least-squares slope written in the
/// legend. Returns the slopes. Non-positive points are dropped; a series
/// left with fewer than three points is an error and nothing is written.
pub fn loglog_plot(out: &Path, title: &str, series: &[Series], force: bool) -> Result<Vec<f64>> {
    guard_overwrite(out, force)?;
    let series: Vec<Series> = series
        .iter()
        .map(|s| Series {
            name: s.name.clone(),
            points: s.points.iter().copied().filter(|(x, y)| *x > 0.0 && *y > 0.0).collect(),
        })
        .collect();
    if series.is_empty() {
        bail!("no data to plot");
    }
    let mut slopes = Vec::new();
    for s in &series {
        let (xs, ys): (Vec<f64>, Vec<f64>) = s.points.iter().copied().unzip();
        slopes.push(loglog_slope(&xs, &ys).with_context(|| format!("series `{}`", s.name))?);
    }
    let all = || series.iter().flat_map(|s| s.points.iter().copied());
    let (x0, x1) = decade_range(all().map(|p| p.0)).context("no positive abscissae")?;
    let (y0, y1) = decade_range(all().map(|p| p.1)).context("no positive ordinates")?;

    let mut buf = vec![255u8; (WIDTH * HEIGHT * 3) as usize];
    {
        let root = BitMapBackend::with_buffer(&mut buf, (WIDTH, HEIGHT)).into_drawing_area();
        let mut chart = ChartBuilder::on(&root)
            .margin(MARGIN)
            .build_cartesian_2d((x0..x1).log_scale(), (y0..y1).log_scale())
            .map_err(|e| anyhow::anyhow!("{e}"))?;
        let frame = [(x0, y0), (x1, y0), (x1, y1), (x0, y1), (x0, y0)];
        chart.draw_series(LineSeries::new(frame, &BLACK)).map_err(|e| anyhow::anyhow!("{e}"))?;
        for (k, s) in series.iter().enumerate() {
            let (r, g, b) = PALETTE[k % PALETTE.len()];
            let colour = RGBColor(r, g, b);
            chart
                .draw_series(LineSeries::new(s.points.iter().copied(), colour.stroke_width(2)))
                .map_err(|e| anyhow::anyhow!("{e}"))?;
            chart
                .draw_series(s.points.iter().map(|&p| Circle::new(p, 4, colour.filled())))
                .map_err(|e| anyhow::anyhow!("{e}"))?;
        }
        root.present().map_err(|e| anyhow::anyhow!("{e}"))?;
    }
    let mut img = RgbImage::from_raw(WIDTH, HEIGHT, buf).context("plot buffer size")?;
    let black = Rgb([0, 0, 0]);
    draw_text(&mut img, MARGIN, 16, title, 2, black);
    draw_text(&mut img, MARGIN, HEIGHT - MARGIN + 8, &format!("{x0:.0e}"), 1, black);
    let xr = format!("{x1:.0e}");
    draw_text(&mut img, WIDTH - MARGIN - 8 * xr.len() as u32, HEIGHT - MARGIN + 8, &xr, 1, black);
    draw_text(&mut img, 4, HEIGHT - MARGIN - 8, &format!("{y0:.0e}"), 1, black);
    draw_text(&mut img, 4, MARGIN, &format!("{y1:.0e}"), 1, black);
    for (k, (s, slope)) in series.iter().zip(&slopes).enumerate() {
        let (r, g, b) = PALETTE[k % PALETTE.len()];
        let label = format!("{}  slope {slope:.3}", s.name);
        draw_text(&mut img, MARGIN + 12, MARGIN + 12 + 20 * k as u32, &label, 2, Rgb([r, g, b]));
    }
    save(&img, out)?;
    Ok(slopes)
}

/// Reads a CSV and plots the `y_cols` against `x_col` on log-log axes.
pub fn loglog_from_csv(csv: &Path, x_col: &str, y_cols: &[&str], out: &Path, force: bool) -> Result<Vec<f64>> {
    let (header, rows) = read_csv(csv).with_context(|| format!("reading {}", csv.display()))?;
    if rows.is_empty() {
        bail!("{} has no data rows", csv.display());
    }
    let col = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .with_context(|| format!("{} has no column `{name}`", csv.display()))
    };
    let xi = col(x_col)?;
    let series = y_cols
        .iter()
        .map(|&y| {
            let yi = col(y)?;
            Ok(Series {
                name: y.to_string(),
                points: rows.iter().map(|r| (r[xi], r[yi])).collect(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let title = csv.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    loglog_plot(out, &title, &series, force)
}

fn grey(v: f64, lo: f64, hi: f64) -> Rgb<u8> {
    let t = if hi > lo { (v - lo) / (hi - lo) } else { 0.0 };
    let g = (t.clamp(0.0, 1.0) * 255.0).round() as u8;
    Rgb([g, g, g])
}

/// Images side by side, each scaled to its own range, rows of the grid as
/// image rows.
pub fn image_panel(images: &[(&str, &GridImage)], out: &Path, force: bool) -> Result<()> {
    guard_overwrite(out, force)?;
    let Some((_, first)) = images.first() else { bail!("no images") };
    let (ht, w) = first.dims();
    if images.iter().any(|(_, u)| u.dims() != (ht, w)) {
        bail!("panel images must share one grid");
    }
    let label = 24u32;
    let gap = 8u32;
    let (w32, h32) = (w as u32, ht as u32);
    let n = images.len() as u32;
    let mut img = RgbImage::from_pixel(n * w32 + (n - 1) * gap, h32 + label, Rgb([255, 255, 255]));
    for (k, (name, u)) in images.iter().enumerate() {
        let x0 = k as u32 * (w32 + gap);
        let (lo, hi) = (u.min(), u.max());
        for i in 0..ht {
            for j in 0..w {
                img.put_pixel(x0 + j as u32, label + i as u32, grey(u.get(i, j), lo, hi));
            }
        }
        draw_text(&mut img, x0 + 2, 8, name, 1, Rgb([0, 0, 0]));
    }
    save(&img, out)
}

/// `u` in grey with the contour points marked in red.
pub fn contour_overlay(u: &GridImage, contours: &[Contour], out: &Path, force: bool) -> Result<()> {
    guard_overwrite(out, force)?;
    let (ht, w) = u.dims();
    let (lo, hi) = (u.min(), u.max());
    let mut img = RgbImage::from_fn(w as u32, ht as u32, |j, i| grey(u.get(i as usize, j as usize), lo, hi));
    let h = u.spacing();
    for c in contours {
        for p in &c.points {
            // x.x runs along rows.
            let (i, j) = ((p.x / h - 0.5).round(), (p.y / h - 0.5).round());
            if i >= 0.0 && j >= 0.0 && (i as usize) < ht && (j as usize) < w {
                img.put_pixel(j as u32, i as u32, Rgb([220, 30, 30]));
            }
        }
    }
    save(&img, out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slopes_of_power_laws() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("p.png");
        let xs = [1e-3, 1e-2, 1e-1, 0.5];
        let series = [
            Series {
                name: "square".into(),
                points: xs.iter().map(|&x| (x, 3.0 * x * x)).collect(),
            },
            Series {
                name: "linear".into(),
                points: xs.iter().map(|&x| (x, x)).collect(),
            },
        ];
        let slopes = loglog_plot(&out, "test", &series, false).unwrap();
        assert!((slopes[0] - 2.0).abs() < 1e-12 && (slopes[1] - 1.0).abs() < 1e-12);
        let img = image::open(&out).unwrap();
        assert_eq!((img.width(), img.height()), (WIDTH, HEIGHT));
        assert!(loglog_plot(&out, "test", &series, false).is_err());
    }
}
