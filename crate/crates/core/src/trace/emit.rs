// SPDX-License-Identifier: Apache-2.0

//! Grid output: CSV (cells only), JSON (the whole grid) and an SVG heatmap.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::fsutil::write_atomic;
use crate::numkernel::Matrix;
use crate::trace::TraceGrid;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GridFormat {
    Csv,
    Json,
    Svg,
}

impl FromStr for GridFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(Self::Csv),
            "json" => Ok(Self::Json),
            "svg" => Ok(Self::Svg),
            other => Err(Error::Config(format!("unknown grid format `{other}` (csv, json, svg)"))),
        }
    }
}

impl GridFormat {
    /// Format implied by a file extension, if any.
    pub fn from_path(path: &Path) -> Option<Self> {
        path.extension()?.to_str()?.parse().ok()
    }
}

pub fn emit_grid(grid: &TraceGrid, format: GridFormat, path: &Path) -> Result<()> {
    let body = match format {
        GridFormat::Csv => grid_to_csv(grid)?,
        GridFormat::Json => grid_to_json(grid),
        GridFormat::Svg => render_svg(grid),
    };
    write_atomic(path, body.as_bytes())
}

/// Header `token,0,1,…`, then one row per token with 6-decimal values.
pub fn grid_to_csv(grid: &TraceGrid) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["token".to_string()];
    header.extend((0..grid.n_layers).map(|l| l.to_string()));
    w.write_record(&header).map_err(csv_err)?;
    for (t, label) in grid.token_strings.iter().enumerate() {
        let mut row = vec![label.clone()];
        row.extend(grid.cells.row(t).iter().map(|v| format!("{v:.6}")));
        w.write_record(&row).map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Format(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv of utf-8 strings"))
}

fn csv_err(e: csv::Error) -> Error {
    Error::Format(format!("csv: {e}"))
}

/// Reads back token labels and cells from [`grid_to_csv`] output.
pub fn parse_grid_csv(text: &str) -> Result<(Vec<String>, Matrix)> {
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    let header = r.headers().map_err(csv_err)?.clone();
    if header.get(0) != Some("token") {
        return Err(Error::Format("grid csv must start with a `token` column".into()));
    }
    for (i, h) in header.iter().skip(1).enumerate() {
        if h != i.to_string() {
            return Err(Error::Format(format!("layer column {i} is labelled `{h}`")));
        }
    }
    let n_layers = header.len() - 1;
    let mut labels = Vec::new();
    let mut data = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        if rec.len() != n_layers + 1 {
            return Err(Error::ParseLine { line: i + 2, message: format!("expected {} fields", n_layers + 1) });
        }
        labels.push(rec[0].to_string());
        for field in rec.iter().skip(1) {
            let v: f32 = field
                .parse()
                .map_err(|_| Error::ParseLine { line: i + 2, message: format!("bad value `{field}`") })?;
            data.push(v);
        }
    }
    let rows = labels.len();
    Ok((labels, Matrix::new(rows, n_layers, data)?))
}

pub fn grid_to_json(grid: &TraceGrid) -> String {
    serde_json::to_string_pretty(grid).expect("grid serializes")
}

pub fn grid_from_json(text: &str) -> Result<TraceGrid> {
    let grid: TraceGrid = serde_json::from_str(text)?;
    if grid.cells.rows() != grid.token_strings.len() || grid.cells.cols() != grid.n_layers {
        return Err(Error::Shape(format!(
            "grid cells are {}x{} for {} tokens and {} layers",
            grid.cells.rows(),
            grid.cells.cols(),
            grid.token_strings.len(),
            grid.n_layers
        )));
    }
    Ok(grid)
}

const CELL_W: usize = 24;
const CELL_H: usize = 18;
const LABEL_W: usize = 120;
const TOP: usize = 40;
const LIGHT: [f64; 3] = [255.0, 247.0, 236.0];
const DARK: [f64; 3] = [127.0, 0.0, 0.0];

/// Colour for a cell: linear from `corrupted_prob` (light) to `clean_prob`
/// (dark), clamped at both ends.
pub fn cell_colour(value: f32, corrupted: f32, clean: f32) -> String {
    let span = clean - corrupted;
    let f = if span.abs() < f32::EPSILON {
        if value >= clean { 1.0 } else { 0.0 }
    } else {
        ((value - corrupted) / span).clamp(0.0, 1.0) as f64
    };
    let c: Vec<u8> = (0..3).map(|i| (LIGHT[i] + f * (DARK[i] - LIGHT[i])).round() as u8).collect();
    format!("#{:02x}{:02x}{:02x}", c[0], c[1], c[2])
}

fn xml_escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            c if c.is_control() => {
                let _ = write!(out, "\\u{{{:x}}}", c as u32);
            }
            c => out.push(c),
        }
    }
    out
}

pub fn render_svg(grid: &TraceGrid) -> String {
    let n = grid.token_strings.len();
    let width = LABEL_W + grid.n_layers * CELL_W + 10;
    let height = TOP + n * CELL_H + 10;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="monospace" font-size="11">"#
    );
    let _ = writeln!(
        s,
        r#"<title>restored p({}) clean={:.4} corrupted={:.4} sigma={:.4} samples={}</title>"#,
        xml_escape(&grid.target_token),
        grid.clean_prob,
        grid.corrupted_prob,
        grid.sigma,
        grid.n_samples
    );
    for l in 0..grid.n_layers {
        let x = LABEL_W + l * CELL_W + CELL_W / 2;
        let _ = writeln!(s, r#"<text x="{x}" y="{}" text-anchor="middle">{l}</text>"#, TOP - 6);
    }
    for (t, label) in grid.token_strings.iter().enumerate() {
        let y = TOP + t * CELL_H;
        let mark = if grid.subject.contains(t) { "*" } else { "" };
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="end" xml:space="preserve">{}{mark}</text>"#,
            LABEL_W - 6,
            y + CELL_H - 5,
            xml_escape(label)
        );
        for l in 0..grid.n_layers {
            let v = grid.cell(t, l);
            let _ = writeln!(
                s,
                r#"<rect class="cell" x="{}" y="{y}" width="{CELL_W}" height="{CELL_H}" fill="{}"><title>{v:.6}</title></rect>"#,
                LABEL_W + l * CELL_W,
                cell_colour(v, grid.corrupted_prob, grid.clean_prob)
            );
        }
    }
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::HookKind;
    use crate::trace::SubjectSpan;

    fn grid() -> TraceGrid {
        TraceGrid {
            token_strings: vec!["a,\"b".into(), "<c>".into()],
            n_layers: 2,
            cells: Matrix::new(2, 2, vec![0.1, 0.5, 0.9, 0.123_456_7]).unwrap(),
            clean_prob: 0.9,
            corrupted_prob: 0.1,
            sigma: 1.5,
            n_samples: 10,
            base_seed: 42,
            hook_kind: HookKind::ResidPost,
            window: 1,
            subject: SubjectSpan { start: 0, end: 1 },
            target_token: "p".into(),
        }
    }

    #[test]
    fn csv_round_trip() {
        let g = grid();
        let text = grid_to_csv(&g).unwrap();
        assert!(text.starts_with("token,0,1\n"));
        let (labels, cells) = parse_grid_csv(&text).unwrap();
        assert_eq!(labels, g.token_strings);
        for (a, b) in cells.data().iter().zip(g.cells.data()) {
            assert!((a - b).abs() <= 5e-7);
        }
        let mut again = g.clone();
        again.cells = cells;
        assert_eq!(grid_to_csv(&again).unwrap(), text);
    }

    #[test]
    fn svg_has_one_rect_per_cell() {
        let svg = render_svg(&grid());
        assert_eq!(svg.matches("<rect").count(), 4);
        assert!(svg.contains("&lt;c&gt;"));
    }

    #[test]
    fn colour_ramp_endpoints() {
        assert_eq!(cell_colour(0.1, 0.1, 0.9), "#fff7ec");
        assert_eq!(cell_colour(0.9, 0.1, 0.9), "#7f0000");
        assert_eq!(cell_colour(2.0, 0.1, 0.9), "#7f0000");
        assert_eq!(cell_colour(0.0, 0.1, 0.9), "#fff7ec");
    }

    #[test]
    fn json_reload_renders_identically() {
        let g = grid();
        let back = grid_from_json(&grid_to_json(&g)).unwrap();
        assert_eq!(back, g);
        assert_eq!(render_svg(&back), render_svg(&g));
    }
}
