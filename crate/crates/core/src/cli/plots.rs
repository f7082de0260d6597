//! SVG rendering of trajectory and trace CSVs.

use std::path::{Path, PathBuf};

use plotters::prelude::*;

use crate::error::{Error, Result};

/// DG colors in bus order: blue, red, green, brown.
const DG_COLORS: [RGBColor; 4] = [
    RGBColor(31, 78, 196),
    RGBColor(214, 39, 40),
    RGBColor(44, 160, 44),
    RGBColor(140, 86, 45),
];

fn dg_color(i: usize) -> RGBColor {
    if i < DG_COLORS.len() {
        DG_COLORS[i]
    } else {
        let c = Palette99::pick(i).to_rgba();
        RGBColor(c.0, c.1, c.2)
    }
}

/// Signal families of the trajectory CSV: column prefix, file name, axis label.
pub const FAMILIES: [(&str, &str, &str); 6] = [
    ("omega", "frequency.svg", "f [Hz]"),
    ("E", "voltage.svg", "E [V]"),
    ("P", "active_power.svg", "P [W]"),
    ("Q", "reactive_power.svg", "Q [VAr]"),
    ("Omega", "secondary_frequency.svg", "Omega [rad/s]"),
    ("e", "secondary_voltage.svg", "e [V]"),
];

struct Table {
    header: Vec<String>,
    rows: Vec<Vec<f64>>,
}

fn read_table(path: &Path) -> Result<Table> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header: Vec<String> = lines
        .next()
        .map(|h| h.split(',').map(|s| s.trim().to_string()).collect())
        .unwrap_or_default();
    let mut rows = Vec::new();
    for (k, line) in lines.enumerate() {
        let row: Vec<f64> = line
            .split(',')
            .map(|x| x.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Parse {
                line: k + 2,
                column: 1,
                message: format!("{}: {e}", path.display()),
            })?;
        rows.push(row);
    }
    Ok(Table { header, rows })
}

fn draw_err<E: std::fmt::Display>(path: &Path) -> impl Fn(E) -> Error + '_ {
    move |e| Error::io(path, std::io::Error::other(e.to_string()))
}

fn padded(lo: f64, hi: f64) -> (f64, f64) {
    if !(lo.is_finite() && hi.is_finite()) {
        return (0.0, 1.0);
    }
    let span = hi - lo;
    let pad = if span > 0.0 {
        0.05 * span
    } else {
        lo.abs().max(1.0) * 1e-3
    };
    (lo - pad, hi + pad)
}

fn column_of(header: &[String], prefix: &str, i: usize) -> Option<usize> {
    let name = format!("{prefix}_{i}");
    header
        .iter()
        .position(|h| h == &name || h.strip_prefix(&name).is_some_and(|r| r.starts_with('[')))
}

/// One line chart per signal family, one series per DG. NaN samples (DG
/// plugged out) break the line.
fn plot_family(table: &Table, prefix: &str, label: &str, path: &Path) -> Result<()> {
    let cols: Vec<usize> = (1..)
        .map_while(|i| column_of(&table.header, prefix, i))
        .collect();
    let (mut t0, mut t1) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY);
    for r in &table.rows {
        t0 = t0.min(r[0]);
        t1 = t1.max(r[0]);
        for &c in &cols {
            if r[c].is_finite() {
                y0 = y0.min(r[c]);
                y1 = y1.max(r[c]);
            }
        }
    }
    let (t0, t1) = padded(t0, t1);
    let (y0, y1) = padded(y0, y1);
    let err = draw_err(path);
    let root = SVGBackend::new(path, (900, 500)).into_drawing_area();
    root.fill(&WHITE).map_err(&err)?;
    let mut chart = ChartBuilder::on(&root)
        .margin(15)
        .x_label_area_size(40)
        .y_label_area_size(70)
        .build_cartesian_2d(t0..t1, y0..y1)
        .map_err(&err)?;
    chart
        .configure_mesh()
        .x_desc("t [s]")
        .y_desc(label)
        .draw()
        .map_err(&err)?;
    for (i, &c) in cols.iter().enumerate() {
        let color = dg_color(i);
        let mut segment: Vec<(f64, f64)> = Vec::new();
        let mut segments = Vec::new();
        for r in &table.rows {
            if r[c].is_finite() {
                segment.push((r[0], r[c]));
            } else if !segment.is_empty() {
                segments.push(std::mem::take(&mut segment));
            }
        }
        segments.push(segment);
        for (k, s) in segments.into_iter().enumerate() {
            let series = chart
                .draw_series(LineSeries::new(s, color.stroke_width(2)))
                .map_err(&err)?;
            if k == 0 {
                series.label(format!("DG {}", i + 1)).legend(move |(x, y)| {
                    PathElement::new(vec![(x, y), (x + 20, y)], color.stroke_width(2))
                });
            }
        }
    }
    if !cols.is_empty() {
        chart
            .configure_series_labels()
            .background_style(WHITE.mix(0.8))
            .border_style(BLACK)
            .draw()
            .map_err(&err)?;
    }
    root.present().map_err(&err)
}

/// Complex-plane scatter of a trace, shaded from light to dark along the
/// sweep. The view is limited to the slow part of the spectrum.
fn plot_trace(table: &Table, path: &Path) -> Result<()> {
    const VIEW_RE: f64 = -30.0;
    let mut pts: Vec<(usize, f64, f64)> = Vec::new();
    for (k, r) in table.rows.iter().enumerate() {
        for pair in r[1..].chunks(2) {
            if pair.len() == 2 && pair[0].is_finite() && pair[1].is_finite() {
                pts.push((k, pair[0], pair[1]));
            }
        }
    }
    let slow: Vec<_> = pts.iter().copied().filter(|p| p.1 >= VIEW_RE).collect();
    let shown = if slow.is_empty() { pts } else { slow };
    let fold = |f: fn(f64, f64) -> f64, init: f64, sel: fn(&(usize, f64, f64)) -> f64| {
        shown.iter().map(sel).fold(init, f)
    };
    let (x0, x1) = padded(
        fold(f64::min, f64::INFINITY, |p| p.1),
        fold(f64::max, f64::NEG_INFINITY, |p| p.1),
    );
    let (y0, y1) = padded(
        fold(f64::min, f64::INFINITY, |p| p.2),
        fold(f64::max, f64::NEG_INFINITY, |p| p.2),
    );
    let err = draw_err(path);
    let root = SVGBackend::new(path, (700, 600)).into_drawing_area();
    root.fill(&WHITE).map_err(&err)?;
    let mut chart = ChartBuilder::on(&root)
        .margin(15)
        .x_label_area_size(40)
        .y_label_area_size(60)
        .build_cartesian_2d(x0..x1, y0..y1)
        .map_err(&err)?;
    chart
        .configure_mesh()
        .x_desc("Re")
        .y_desc("Im")
        .draw()
        .map_err(&err)?;
    let last = table.rows.len().saturating_sub(1).max(1) as f64;
    chart
        .draw_series(shown.iter().map(|&(k, re, im)| {
            let s = k as f64 / last;
            let shade = RGBColor((200.0 * (1.0 - s)) as u8, (200.0 * (1.0 - s)) as u8, 255);
            Circle::new((re, im), 3, shade.filled())
        }))
        .map_err(&err)?;
    root.present().map_err(&err)
}

/// Render every CSV present in `dir`; fails if there is nothing to plot.
pub fn emit_plots(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    let traj = dir.join("trajectory.csv");
    let trace = dir.join("trace.csv");
    if !traj.exists() && !trace.exists() {
        return Err(Error::io(
            &traj,
            std::io::Error::new(
                std::io::ErrorKind::NotFound,
                "no trajectory.csv or trace.csv",
            ),
        ));
    }
    if traj.exists() {
        let table = read_table(&traj)?;
        for (prefix, file, label) in FAMILIES {
            let p = dir.join(file);
            plot_family(&table, prefix, label, &p)?;
            written.push(p);
        }
    }
    if trace.exists() {
        let table = read_table(&trace)?;
        let p = dir.join("trace.svg");
        plot_trace(&table, &p)?;
        written.push(p);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_trajectory_renders() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(
            dir.path().join("trajectory.csv"),
            crate::simengine::csv_header(2) + "\n",
        )
        .unwrap();
        let files = emit_plots(dir.path()).unwrap();
        assert_eq!(files.len(), 6);
        for f in files {
            assert!(std::fs::read_to_string(f).unwrap().contains("<svg"));
        }
    }

    #[test]
    fn gaps_and_trace() {
        let dir = tempfile::tempdir().unwrap();
        let mut csv = crate::simengine::csv_header(2) + "\n";
        for k in 0..5 {
            let v = if k == 2 { f64::NAN } else { 1.0 + k as f64 };
            csv.push_str(&format!("{k},50,{v},325,{v},0,{v},0,{v},0,0,0,0\n"));
        }
        std::fs::write(dir.path().join("trajectory.csv"), csv).unwrap();
        std::fs::write(
            dir.path().join("trace.csv"),
            "gain_value,re_1,im_1\n1,-1,2\n2,-2,1\n",
        )
        .unwrap();
        assert_eq!(emit_plots(dir.path()).unwrap().len(), 7);
    }

    #[test]
    fn nothing_to_plot() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(emit_plots(dir.path()), Err(Error::Io { .. })));
    }
}
