//! Convergence-curve export: training loss against cumulative samples seen
//! for a standard/curriculum run pair, as CSV plus a rendered PNG.

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::training::TrainTrace;
use crate::util::write_file;

#[derive(Debug, Clone, PartialEq)]
pub struct CurveSeries {
    pub label: String,
    /// (cumulative samples seen, training loss) per recorded step.
    pub points: Vec<(f64, f64)>,
}

impl CurveSeries {
    pub fn from_trace(label: &str, trace: &TrainTrace) -> Self {
        CurveSeries {
            label: label.to_string(),
            points: trace
                .steps
                .iter()
                .map(|s| (s.samples_seen as f64, s.loss))
                .collect(),
        }
    }
}

fn load_trace(runs_dir: &Path, run_id: &str) -> Result<TrainTrace> {
    let dir = runs_dir.join(run_id);
    if !dir.join("steps.csv").exists() {
        return Err(Error::NotFound(format!(
            "trace for run '{run_id}' (no {}/steps.csv)",
            dir.display()
        )));
    }
    TrainTrace::read_csv(&dir)
}

/// Reads the step traces of two runs and writes `<out_prefix>.csv` and
/// `<out_prefix>.png` with both curves on a shared samples-seen axis.
/// Returns the two written paths.
pub fn render_convergence(
    runs_dir: &Path,
    standard_run: &str,
    curriculum_run: &str,
    out_prefix: &Path,
) -> Result<(PathBuf, PathBuf)> {
    let standard = CurveSeries::from_trace(standard_run, &load_trace(runs_dir, standard_run)?);
    let curriculum =
        CurveSeries::from_trace(curriculum_run, &load_trace(runs_dir, curriculum_run)?);
    write_series(&[standard, curriculum], out_prefix)
}

/// Writes CSV + PNG for arbitrary series (first series drawn blue, second
/// red, further series green).
pub fn write_series(series: &[CurveSeries], out_prefix: &Path) -> Result<(PathBuf, PathBuf)> {
    if series.is_empty() {
        return Err(Error::parameter("series", "nothing to plot"));
    }
    let csv_path = out_prefix.with_extension("csv");
    let png_path = out_prefix.with_extension("png");

    let mut csv = String::from("arm,step,samples_seen,loss\n");
    for s in series {
        for (i, (samples, loss)) in s.points.iter().enumerate() {
            csv.push_str(&format!("{},{},{},{}\n", s.label, i + 1, samples, loss));
        }
    }
    write_file(&csv_path, csv.as_bytes())?;

    plot_series_png(series, &png_path)?;
    Ok((csv_path, png_path))
}

const COLORS: [[u8; 3]; 3] = [[55, 100, 185], [196, 58, 58], [46, 140, 80]];

/// Renders the series as polylines on labeled axes. Tick labels use a
/// small built-in digit font; series order determines color (blue, red,
/// green).
pub fn plot_series_png(series: &[CurveSeries], path: &Path) -> Result<()> {
    const W: u32 = 900;
    const H: u32 = 540;
    const ML: i64 = 80; // left margin
    const MR: i64 = 25;
    const MT: i64 = 25;
    const MB: i64 = 55;

    let mut img = image::RgbImage::from_pixel(W, H, image::Rgb([255, 255, 255]));

    let x_max = series
        .iter()
        .flat_map(|s| s.points.iter().map(|p| p.0))
        .fold(0.0f64, f64::max)
        .max(1.0);
    let y_max = series
        .iter()
        .flat_map(|s| s.points.iter().map(|p| p.1))
        .filter(|v| v.is_finite())
        .fold(0.0f64, f64::max)
        .max(1e-12);

    let plot_w = (W as i64 - ML - MR) as f64;
    let plot_h = (H as i64 - MT - MB) as f64;
    let to_px = |x: f64, y: f64| -> (i64, i64) {
        let px = ML as f64 + (x / x_max) * plot_w;
        let py = (H as i64 - MB) as f64 - (y / y_max).min(1.0) * plot_h;
        (px.round() as i64, py.round() as i64)
    };

    let black = image::Rgb([20u8, 20, 20]);
    let grey = image::Rgb([210u8, 210, 210]);
    let put = |img: &mut image::RgbImage, x: i64, y: i64, c: image::Rgb<u8>| {
        if (0..W as i64).contains(&x) && (0..H as i64).contains(&y) {
            img.put_pixel(x as u32, y as u32, c);
        }
    };

    // Gridlines and ticks: 5 divisions per axis.
    for i in 0..=5 {
        let xv = x_max * i as f64 / 5.0;
        let (px, _) = to_px(xv, 0.0);
        for y in MT..(H as i64 - MB) {
            put(&mut img, px, y, grey);
        }
        draw_number(&mut img, xv, px - 12, H as i64 - MB + 8);

        let yv = y_max * i as f64 / 5.0;
        let (_, py) = to_px(0.0, yv);
        for x in ML..(W as i64 - MR) {
            put(&mut img, x, py, grey);
        }
        draw_number(&mut img, yv, 6, py - 3);
    }

    // Axes on top of the grid.
    for x in ML..=(W as i64 - MR) {
        put(&mut img, x, H as i64 - MB, black);
    }
    for y in MT..=(H as i64 - MB) {
        put(&mut img, ML, y, black);
    }

    // Legend: a short color swatch per series, top right.
    for (si, _) in series.iter().enumerate() {
        let color = image::Rgb(COLORS[si.min(COLORS.len() - 1)]);
        let y = MT + 12 + 14 * si as i64;
        for dx in 0..30 {
            put(&mut img, W as i64 - MR - 130 + dx, y, color);
            put(&mut img, W as i64 - MR - 130 + dx, y + 1, color);
        }
        draw_number(&mut img, (si + 1) as f64, W as i64 - MR - 92, y - 3);
    }

    for (si, s) in series.iter().enumerate() {
        let color = image::Rgb(COLORS[si.min(COLORS.len() - 1)]);
        let mut prev: Option<(i64, i64)> = None;
        for &(x, y) in &s.points {
            if !y.is_finite() {
                prev = None;
                continue;
            }
            let p = to_px(x, y);
            if let Some(q) = prev {
                draw_line(&mut img, q, p, color);
            }
            prev = Some(p);
        }
    }

    img.save(path).map_err(|e| Error::ImageDecode {
        path: path.to_path_buf(),
        source: e,
    })
}

fn draw_line(img: &mut image::RgbImage, from: (i64, i64), to: (i64, i64), color: image::Rgb<u8>) {
    let (w, h) = (img.width() as i64, img.height() as i64);
    let (mut x0, mut y0) = from;
    let (x1, y1) = to;
    let dx = (x1 - x0).abs();
    let dy = -(y1 - y0).abs();
    let sx = if x0 < x1 { 1 } else { -1 };
    let sy = if y0 < y1 { 1 } else { -1 };
    let mut err = dx + dy;
    loop {
        if (0..w).contains(&x0) && (0..h).contains(&y0) {
            img.put_pixel(x0 as u32, y0 as u32, color);
        }
        if x0 == x1 && y0 == y1 {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x0 += sx;
        }
        if e2 <= dx {
            err += dx;
            y0 += sy;
        }
    }
}

/// 5x7 glyphs for tick labels (digits plus '.', '-', 'e', '+').
fn glyph(c: char) -> Option<[u8; 7]> {
    // Each byte is one row, low 5 bits used, MSB-left.
    let g = match c {
        '0' => [0x0E, 0x11, 0x13, 0x15, 0x19, 0x11, 0x0E],
        '1' => [0x04, 0x0C, 0x04, 0x04, 0x04, 0x04, 0x0E],
        '2' => [0x0E, 0x11, 0x01, 0x02, 0x04, 0x08, 0x1F],
        '3' => [0x1F, 0x02, 0x04, 0x02, 0x01, 0x11, 0x0E],
        '4' => [0x02, 0x06, 0x0A, 0x12, 0x1F, 0x02, 0x02],
        '5' => [0x1F, 0x10, 0x1E, 0x01, 0x01, 0x11, 0x0E],
        '6' => [0x06, 0x08, 0x10, 0x1E, 0x11, 0x11, 0x0E],
        '7' => [0x1F, 0x01, 0x02, 0x04, 0x08, 0x08, 0x08],
        '8' => [0x0E, 0x11, 0x11, 0x0E, 0x11, 0x11, 0x0E],
        '9' => [0x0E, 0x11, 0x11, 0x0F, 0x01, 0x02, 0x0C],
        '.' => [0x00, 0x00, 0x00, 0x00, 0x00, 0x0C, 0x0C],
        '-' => [0x00, 0x00, 0x00, 0x1F, 0x00, 0x00, 0x00],
        '+' => [0x00, 0x04, 0x04, 0x1F, 0x04, 0x04, 0x00],
        'e' => [0x00, 0x00, 0x0E, 0x11, 0x1F, 0x10, 0x0E],
        _ => return None,
    };
    Some(g)
}

fn draw_text(img: &mut image::RgbImage, text: &str, x: i64, y: i64) {
    let color = image::Rgb([40u8, 40, 40]);
    let mut cx = x;
    for c in text.chars() {
        if let Some(rows) = glyph(c) {
            for (ry, row) in rows.iter().enumerate() {
                for rx in 0..5 {
                    if row & (0x10 >> rx) != 0 {
                        let (px, py) = (cx + rx as i64, y + ry as i64);
                        if (0..img.width() as i64).contains(&px)
                            && (0..img.height() as i64).contains(&py)
                        {
                            img.put_pixel(px as u32, py as u32, color);
                        }
                    }
                }
            }
        }
        cx += 6;
    }
}

fn draw_number(img: &mut image::RgbImage, value: f64, x: i64, y: i64) {
    let text = if value == 0.0 {
        "0".to_string()
    } else if value.abs() < 0.01 || value.abs() >= 100000.0 {
        format!("{value:.1e}")
    } else if value.abs() >= 100.0 {
        format!("{value:.0}")
    } else {
        format!("{value:.2}")
    };
    draw_text(img, &text, x, y);
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::training::StepRecord;

    fn fake_trace(steps: usize, scale: f64) -> TrainTrace {
        TrainTrace {
            steps: (1..=steps)
                .map(|i| StepRecord {
                    step: i,
                    samples_seen: i * 8,
                    loss: scale / i as f64,
                })
                .collect(),
            epochs: vec![],
            wall_time_secs: 0.0,
        }
    }

    #[test]
    fn identical_runs_give_coincident_curves() {
        let t = fake_trace(20, 1.0);
        let a = CurveSeries::from_trace("a", &t);
        let b = CurveSeries::from_trace("b", &t);
        assert_eq!(a.points, b.points);
    }

    #[test]
    fn csv_row_count_matches_recorded_steps() {
        let dir = tempfile::tempdir().unwrap();
        let series = [
            CurveSeries::from_trace("standard", &fake_trace(25, 1.0)),
            CurveSeries::from_trace("curriculum", &fake_trace(17, 0.5)),
        ];
        let (csv_path, png_path) = write_series(&series, &dir.path().join("pair")).unwrap();
        let body = std::fs::read_to_string(&csv_path).unwrap();
        let rows = body.lines().count() - 1; // header
        assert_eq!(rows, 25 + 17);
        assert!(png_path.exists());
        let img = image::open(&png_path).unwrap();
        assert_eq!((img.width(), img.height()), (900, 540));
    }

    #[test]
    fn missing_trace_is_a_reference_error() {
        let dir = tempfile::tempdir().unwrap();
        let err =
            render_convergence(dir.path(), "nope-a", "nope-b", &dir.path().join("x")).unwrap_err();
        assert!(matches!(err, Error::NotFound(_)), "{err}");
    }
}
