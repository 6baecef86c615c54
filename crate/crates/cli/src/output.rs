//! Artifact writers. Every file is written to a temporary sibling and
//! renamed into place, so readers never see a half-written artifact.

use std::io::Write;
use std::path::{Path, PathBuf};

use ensemble_minimax::ensemble::{Control, TimeGrid};
use serde::Serialize;

use crate::error::{CliError, CliResult};

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(format!("{}: {e}", path.display()))
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> CliResult<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    std::fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(&dir).map_err(|e| io_err(&dir, e))?;
    tmp.write_all(bytes).map_err(|e| io_err(path, e))?;
    tmp.as_file().sync_all().map_err(|e| io_err(path, e))?;
    tmp.persist(path).map_err(|e| io_err(path, e.error))?;
    Ok(())
}

/// Shortest decimal that parses back to the same `f64`.
pub fn fmt_f64(x: f64) -> String {
    format!("{x}")
}

pub fn write_csv(
    path: &Path,
    header: &[&str],
    rows: impl IntoIterator<Item = Vec<String>>,
) -> CliResult<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).map_err(|e| io_err(path, e))?;
    for row in rows {
        w.write_record(&row).map_err(|e| io_err(path, e))?;
    }
    let bytes = w.into_inner().map_err(|e| io_err(path, e))?;
    write_atomic(path, &bytes)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| io_err(path, e))?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

/// `t,u` with `t` the left end of each cell.
pub fn write_control(path: &Path, u: &Control) -> CliResult<()> {
    let grid = u.grid();
    write_csv(
        path,
        &["t", "u"],
        (0..grid.cells()).map(|m| vec![fmt_f64(grid.cell_start(m)), fmt_f64(u.values()[[m, 0]])]),
    )
}

/// Loads a `t,u` file written by [`write_control`]; the cell count and
/// cell start times must match `grid`.
pub fn read_control(path: &Path, grid: &TimeGrid) -> CliResult<Control> {
    let bad = |msg: String| CliError::Config(format!("{}: {msg}", path.display()));
    let mut reader = csv::Reader::from_path(path).map_err(|e| bad(e.to_string()))?;
    let header = reader.headers().map_err(|e| bad(e.to_string()))?.clone();
    if header.iter().collect::<Vec<_>>() != ["t", "u"] {
        return Err(bad(format!(
            "expected header t,u, found {}",
            header.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut values = Vec::with_capacity(grid.cells());
    for (m, record) in reader.records().enumerate() {
        let record = record.map_err(|e| bad(e.to_string()))?;
        let parse = |i: usize| -> CliResult<f64> {
            record
                .get(i)
                .and_then(|s| s.parse::<f64>().ok())
                .ok_or_else(|| bad(format!("row {}: unreadable number", m + 1)))
        };
        let (t, u) = (parse(0)?, parse(1)?);
        if m >= grid.cells() || (t - grid.cell_start(m)).abs() > 1e-9 * grid.horizon().max(1.0) {
            return Err(bad(format!(
                "row {} (t = {t}) does not match the configured grid of {} cells, dt = {}",
                m + 1,
                grid.cells(),
                grid.dt()
            )));
        }
        values.push(u);
    }
    if values.len() != grid.cells() {
        return Err(bad(format!(
            "{} rows for a grid of {} cells",
            values.len(),
            grid.cells()
        )));
    }
    Ok(Control::from_scalar_cells(*grid, values)?)
}

/// Minimal static line plot.
pub fn line_plot_svg(
    title: &str,
    x_label: &str,
    y_label: &str,
    series: &[(&str, Vec<(f64, f64)>)],
) -> String {
    const W: f64 = 720.0;
    const H: f64 = 420.0;
    const PAD: f64 = 60.0;
    const COLORS: [&str; 6] = [
        "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b",
    ];
    let points = series.iter().flat_map(|(_, s)| s.iter());
    let (mut x0, mut x1, mut y0, mut y1) = (
        f64::INFINITY,
        f64::NEG_INFINITY,
        f64::INFINITY,
        f64::NEG_INFINITY,
    );
    for &(x, y) in points {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if !(x1 > x0) {
        x1 = x0 + 1.0;
    }
    if !(y1 > y0) {
        y1 = y0 + 1.0;
    }
    let sx = |x: f64| PAD + (x - x0) / (x1 - x0) * (W - 2.0 * PAD);
    let sy = |y: f64| H - PAD - (y - y0) / (y1 - y0) * (H - 2.0 * PAD);

    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" font-family=\"sans-serif\" font-size=\"12\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n\
         <text x=\"{}\" y=\"24\" text-anchor=\"middle\" font-size=\"15\">{title}</text>\n\
         <rect x=\"{PAD}\" y=\"{PAD}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"black\"/>\n\
         <text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{x_label}</text>\n\
         <text x=\"16\" y=\"{}\" text-anchor=\"middle\" transform=\"rotate(-90 16 {})\">{y_label}</text>\n",
        W / 2.0,
        W - 2.0 * PAD,
        H - 2.0 * PAD,
        W / 2.0,
        H - 16.0,
        H / 2.0,
        H / 2.0,
    );
    for (x, anchor) in [(x0, "start"), (x1, "end")] {
        svg += &format!(
            "<text x=\"{}\" y=\"{}\" text-anchor=\"{anchor}\">{x:.4}</text>\n",
            sx(x),
            H - PAD + 16.0
        );
    }
    for y in [y0, y1] {
        svg += &format!(
            "<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{y:.4}</text>\n",
            PAD - 6.0,
            sy(y) + 4.0
        );
    }
    for (k, (name, s)) in series.iter().enumerate() {
        let color = COLORS[k % COLORS.len()];
        let path: Vec<String> = s
            .iter()
            .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
            .collect();
        svg += &format!(
            "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.2\" points=\"{}\"/>\n",
            path.join(" ")
        );
        svg += &format!(
            "<text x=\"{}\" y=\"{}\" fill=\"{color}\">{name}</text>\n",
            W - PAD - 110.0,
            PAD + 16.0 + 16.0 * k as f64
        );
    }
    svg + "</svg>\n"
}

pub fn write_svg(path: &Path, svg: &str) -> CliResult<()> {
    write_atomic(path, svg.as_bytes())
}
