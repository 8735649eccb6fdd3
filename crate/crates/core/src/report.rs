//! CSV tables and standalone SVG line plots.
//!
//! A CSV file is a block of `# key: value` comment lines, a header row, then
//! data rows, LF-terminated. Numbers use the shortest representation that
//! parses back to the same `f64`. Plots are rendered from a [`CsvTable`],
//! never from the reports directly.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::{pair_geometry, BBox};
use crate::losses::{LossKind, LossResult};
use crate::numcheck::{FdConfig, GradCheckReport, WorstCase};
use crate::simulation::{SimConfig, SimReport, SweepReport};

pub const TOOL: &str = concat!(env!("CARGO_PKG_NAME"), " ", env!("CARGO_PKG_VERSION"));

/// Shortest round-trip representation.
pub fn fmt_num(x: f64) -> String {
    format!("{x:?}")
}

fn fmt_box(b: &BBox) -> String {
    format!(
        "{},{},{},{}",
        fmt_num(b.cx()),
        fmt_num(b.cy()),
        fmt_num(b.w()),
        fmt_num(b.h())
    )
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct CsvTable {
    /// Emitted as `# key: value` lines ahead of the header.
    pub metadata: Vec<(String, String)>,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl CsvTable {
    /// Empty table whose metadata starts with the tool name and version.
    pub fn new<S: Into<String>>(header: impl IntoIterator<Item = S>) -> Self {
        CsvTable {
            metadata: vec![("tool".into(), TOOL.into())],
            header: header.into_iter().map(Into::into).collect(),
            rows: Vec::new(),
        }
    }

    pub fn add_meta(&mut self, key: impl Into<String>, value: impl Into<String>) -> &mut Self {
        self.metadata.push((key.into(), value.into()));
        self
    }

    pub fn push_row(&mut self, row: Vec<String>) -> Result<()> {
        if row.len() != self.header.len() {
            return Err(Error::Csv(format!(
                "row has {} fields, header has {}",
                row.len(),
                self.header.len()
            )));
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn column_index(&self, name: &str) -> Result<usize> {
        self.header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn(name.into()))
    }

    pub fn column(&self, name: &str) -> Result<Vec<&str>> {
        let i = self.column_index(name)?;
        Ok(self.rows.iter().map(|r| r[i].as_str()).collect())
    }

    pub fn numeric_column(&self, name: &str) -> Result<Vec<f64>> {
        self.column(name)?
            .into_iter()
            .map(|v| parse_num(name, v))
            .collect()
    }

    pub fn meta(&self, key: &str) -> Option<&str> {
        self.metadata
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    /// The serialized file contents.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        for (key, value) in &self.metadata {
            let value = value.replace(['\r', '\n'], " ");
            writeln!(out, "# {key}: {value}").expect("write to Vec");
        }
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(out);
        w.write_record(&self.header)
            .map_err(|e| Error::Csv(e.to_string()))?;
        for row in &self.rows {
            w.write_record(row).map_err(|e| Error::Csv(e.to_string()))?;
        }
        w.into_inner().map_err(|e| Error::Csv(e.to_string()))
    }

    pub fn parse(bytes: &[u8]) -> Result<Self> {
        let text = std::str::from_utf8(bytes).map_err(|e| Error::Csv(e.to_string()))?;
        let mut metadata = Vec::new();
        let mut rest = text;
        while let Some(body) = rest.strip_prefix('#') {
            let (line, tail) = body.split_once('\n').unwrap_or((body, ""));
            let line = line.trim_end_matches('\r').trim_start();
            let (k, v) = line.split_once(": ").unwrap_or((line, ""));
            metadata.push((k.to_string(), v.to_string()));
            rest = tail;
        }
        // only the leading block is metadata; a later '#' is data
        let mut r = csv::ReaderBuilder::new().from_reader(rest.as_bytes());
        let header = r
            .headers()
            .map_err(|e| Error::Csv(e.to_string()))?
            .iter()
            .map(String::from)
            .collect();
        let mut table = CsvTable {
            metadata,
            header,
            rows: Vec::new(),
        };
        for record in r.records() {
            let record = record.map_err(|e| Error::Csv(e.to_string()))?;
            table.push_row(record.iter().map(String::from).collect())?;
        }
        Ok(table)
    }
}

fn parse_num(column: &str, v: &str) -> Result<f64> {
    v.parse().map_err(|_| Error::NotNumeric {
        column: column.into(),
        value: v.into(),
    })
}

/// Writes `bytes` to a temporary file next to `path`, then renames it into
/// place, so a failed write never leaves a partial file behind.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(path, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

pub fn write_csv(table: &CsvTable, path: &Path) -> Result<()> {
    write_atomic(path, &table.to_bytes()?)
}

pub fn read_csv(path: &Path) -> Result<CsvTable> {
    CsvTable::parse(&fs::read(path).map_err(|e| Error::io(path, e))?)
}

// ---------------------------------------------------------------------------
// Report tables

pub fn sweep_table(report: &SweepReport) -> Result<CsvTable> {
    let mut t = CsvTable::new([
        "kind",
        "offset",
        "iou",
        "value",
        "grad_cx",
        "grad_cy",
        "grad_w",
        "grad_h",
        "grad_norm",
        "overlap_term",
        "penalty_term",
        "aspect_term",
    ]);
    t.add_meta("mode", report.mode.name())
        .add_meta("target", fmt_box(&report.target))
        .add_meta(
            "grad_norm",
            "euclidean norm of [dL/dcx, dL/dcy, dL/dw, dL/dh]",
        );
    for r in &report.rows {
        let mut row = vec![
            r.kind.name().to_string(),
            fmt_num(r.offset),
            fmt_num(r.iou),
            fmt_num(r.value),
        ];
        row.extend(r.grad.iter().map(|g| fmt_num(*g)));
        row.extend(
            [
                r.grad_norm,
                r.terms.overlap,
                r.terms.penalty,
                r.terms.aspect,
            ]
            .map(fmt_num),
        );
        t.push_row(row)?;
    }
    Ok(t)
}

fn join_nums(xs: &[f64]) -> String {
    xs.iter().map(|x| fmt_num(*x)).collect::<Vec<_>>().join(" ")
}

/// Describes the simulation protocol in metadata lines.
pub fn describe_sim(t: &mut CsvTable, cfg: &SimConfig) {
    let l = &cfg.layout;
    t.add_meta(
        "protocol",
        "anchors on concentric rings around each target; every anchor descends toward its target with raw \
         gradients, fixed step and w/h clamped at 1e-3; error is the L1 corner distance summed over all \
         anchor-target pairs",
    )
    .add_meta("targets", cfg.targets.iter().map(fmt_box).collect::<Vec<_>>().join(" "))
    .add_meta("ring_radii", join_nums(&l.ring_radii))
    .add_meta("points_per_ring", l.points_per_ring.to_string())
    .add_meta("anchor_scales", join_nums(&l.scales))
    .add_meta("anchor_aspect_ratios", join_nums(&l.aspect_ratios))
    .add_meta("jitter", fmt_num(l.jitter))
    .add_meta("iterations", cfg.iterations.to_string())
    .add_meta("step_size", fmt_num(cfg.step_size))
    .add_meta("step_decay", fmt_num(cfg.step_decay))
    .add_meta("seed", cfg.seed.to_string());
}

/// Wide table: one row per iteration, one total-error column per kind.
pub fn sim_table(report: &SimReport) -> Result<CsvTable> {
    let mut header = vec!["iteration".to_string()];
    header.extend(report.series.iter().map(|s| s.kind.name().to_string()));
    let mut t = CsvTable::new(header);
    t.add_meta("triples_per_kind", report.triples_per_kind.to_string());
    for it in 0..=report.iterations {
        let mut row = vec![it.to_string()];
        row.extend(report.series.iter().map(|s| fmt_num(s.total_error[it])));
        t.push_row(row)?;
    }
    Ok(t)
}

/// One row per (anchor, target) pair with the final corner error per kind.
pub fn sim_final_table(report: &SimReport, pairs: &[(BBox, BBox)]) -> Result<CsvTable> {
    let mut header: Vec<String> = [
        "triple",
        "anchor_cx",
        "anchor_cy",
        "anchor_w",
        "anchor_h",
        "target_cx",
        "target_cy",
        "target_w",
        "target_h",
    ]
    .map(String::from)
    .into();
    header.extend(report.series.iter().map(|s| s.kind.name().to_string()));
    let mut t = CsvTable::new(header);
    for (i, (anchor, target)) in pairs.iter().enumerate() {
        let mut row = vec![i.to_string()];
        row.extend(
            anchor
                .params()
                .iter()
                .chain(&target.params())
                .map(|x| fmt_num(*x)),
        );
        row.extend(report.series.iter().map(|s| fmt_num(s.final_errors[i])));
        t.push_row(row)?;
    }
    Ok(t)
}

pub fn gradcheck_table(report: &GradCheckReport, cfg: &FdConfig) -> Result<CsvTable> {
    let mut t = CsvTable::new([
        "kind",
        "pairs_tested",
        "pairs_skipped",
        "max_rel_err",
        "worst_component",
        "worst_pair",
        "worst_analytic",
        "worst_numeric",
        "pred_cx",
        "pred_cy",
        "pred_w",
        "pred_h",
        "gt_cx",
        "gt_cy",
        "gt_w",
        "gt_h",
        "passed",
    ]);
    t.add_meta("step_rel", fmt_num(cfg.step_rel))
        .add_meta("tol_rel", fmt_num(cfg.tol_rel))
        .add_meta("tol_abs", fmt_num(cfg.tol_abs))
        .add_meta("exclusion_margin", fmt_num(cfg.exclusion_margin));
    let row = |name: &str, err: f64, worst: &Option<WorstCase>, passed: bool| {
        let mut row = vec![
            name.to_string(),
            report.pairs_tested.to_string(),
            report.pairs_skipped.to_string(),
            fmt_num(err),
        ];
        match worst {
            Some(w) => {
                row.extend([
                    ["cx", "cy", "w", "h"][w.component].to_string(),
                    w.pair_index.to_string(),
                ]);
                row.extend([w.analytic, w.numeric].map(fmt_num));
                row.extend(
                    w.pred
                        .params()
                        .iter()
                        .chain(&w.gt.params())
                        .map(|x| fmt_num(*x)),
                );
            }
            None => row.extend(std::iter::repeat_n(String::new(), 12)),
        }
        row.push(passed.to_string());
        row
    };
    for k in &report.per_kind {
        t.push_row(row(
            k.kind.name(),
            k.max_rel_err,
            &k.worst,
            k.max_rel_err <= cfg.tol_rel,
        ))?;
    }
    t.push_row(row(
        "all",
        report.max_rel_err,
        &report.worst_case,
        report.passed,
    ))?;
    Ok(t)
}

pub fn eval_table(pred: &BBox, gt: &BBox, results: &[(LossKind, LossResult)]) -> Result<CsvTable> {
    let g = pair_geometry(pred, gt);
    let mut t = CsvTable::new([
        "kind",
        "value",
        "grad_cx",
        "grad_cy",
        "grad_w",
        "grad_h",
        "iou",
        "center_dist_sq",
        "enc_diag_sq",
        "enc_w",
        "enc_h",
    ]);
    t.add_meta("pred", fmt_box(pred))
        .add_meta("gt", fmt_box(gt));
    for (kind, r) in results {
        let mut row = vec![kind.name().to_string(), fmt_num(r.value)];
        row.extend(r.grad.iter().map(|x| fmt_num(*x)));
        row.extend([g.iou, g.center_dist_sq, g.enc_diag_sq, g.enc_w, g.enc_h].map(fmt_num));
        t.push_row(row)?;
    }
    Ok(t)
}

// ---------------------------------------------------------------------------
// SVG

#[derive(Debug, Clone, PartialEq)]
pub struct AxisSpec {
    pub column: String,
    pub label: String,
}

/// Where the series of a plot come from.
#[derive(Debug, Clone, PartialEq)]
pub enum SeriesLayout {
    /// Long format: rows grouped by the kind named in `kind_column`, y read
    /// from `y_column`.
    GroupBy {
        kind_column: String,
        y_column: String,
    },
    /// Wide format: every column named after a loss kind is a series.
    KindColumns,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlotSpec {
    pub title: String,
    pub x: AxisSpec,
    pub y_label: String,
    pub series: SeriesLayout,
    pub log_y: bool,
}

/// Fixed stroke style per loss kind: (color, dash pattern, width).
pub fn kind_style(name: &str) -> (&'static str, &'static str, f64) {
    match name {
        "iou" => ("#1f77b4", "", 1.5),
        "giou" => ("#ff7f0e", "6 3", 1.5),
        "diou" => ("#2ca02c", "2 3", 1.5),
        "ciou" => ("#d62728", "", 2.0),
        "eiou" => ("#9467bd", "8 3 2 3", 1.5),
        "niou" => ("#8c564b", "4 2", 1.5),
        "neiou" => ("#000000", "", 2.5),
        _ => ("#7f7f7f", "1 2", 1.0),
    }
}

pub const WIDTH: f64 = 960.0;
pub const HEIGHT: f64 = 600.0;

struct Series {
    name: String,
    points: Vec<(f64, f64)>,
}

fn collect_series(table: &CsvTable, spec: &PlotSpec) -> Result<Vec<Series>> {
    let xs = table.numeric_column(&spec.x.column)?;
    let mut out: Vec<Series> = Vec::new();
    match &spec.series {
        SeriesLayout::GroupBy {
            kind_column,
            y_column,
        } => {
            let kinds = table.column(kind_column)?;
            let ys = table.numeric_column(y_column)?;
            for ((kind, x), y) in kinds.into_iter().zip(xs).zip(ys) {
                match out.iter_mut().find(|s| s.name == kind) {
                    Some(s) => s.points.push((x, y)),
                    None => out.push(Series {
                        name: kind.to_string(),
                        points: vec![(x, y)],
                    }),
                }
            }
        }
        SeriesLayout::KindColumns => {
            for name in table
                .header
                .iter()
                .filter(|h| LossKind::NAMES.contains(&h.as_str()))
            {
                let ys = table.numeric_column(name)?;
                out.push(Series {
                    name: name.clone(),
                    points: xs.iter().copied().zip(ys).collect(),
                });
            }
            if out.is_empty() {
                return Err(Error::MissingColumn("<any loss kind>".into()));
            }
        }
    }
    for s in &mut out {
        s.points
            .retain(|(x, y)| x.is_finite() && y.is_finite() && (!spec.log_y || *y > 0.0));
        if spec.log_y {
            for p in &mut s.points {
                p.1 = p.1.log10();
            }
        }
    }
    Ok(out)
}

/// Roughly six evenly spaced "nice" ticks covering `[lo, hi]`; returns the
/// widened domain and the ticks.
fn nice_ticks(lo: f64, hi: f64) -> ((f64, f64), Vec<f64>) {
    let (lo, hi) = if hi - lo > f64::EPSILON * hi.abs().max(1.0) {
        (lo, hi)
    } else {
        (lo - 0.5 * lo.abs().max(1.0), hi + 0.5 * hi.abs().max(1.0))
    };
    let raw = (hi - lo) / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 2.5, 5.0, 10.0]
        .into_iter()
        .map(|m| m * mag)
        .find(|s| *s >= raw)
        .unwrap_or(10.0 * mag);
    let first = (lo / step).floor();
    let last = (hi / step).ceil();
    let ticks = (0..=(last - first) as i64)
        .map(|i| (first + i as f64) * step)
        .collect();
    ((first * step, last * step), ticks)
}

fn tick_label(v: f64, step: f64, log: bool) -> String {
    if log {
        let p = v.round() as i64;
        return if (v - p as f64).abs() < 1e-9 {
            format!("1e{p}")
        } else {
            format!("{:.3}", 10f64.powf(v))
        };
    }
    let decimals = if step >= 1.0 {
        0
    } else {
        (-step.log10().floor()) as usize + 1
    };
    let s = format!("{v:.decimals$}");
    if s.trim_start_matches('-')
        .chars()
        .all(|c| c == '0' || c == '.')
    {
        "0".into()
    } else {
        s
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Standalone SVG document for `table` under `spec`.
pub fn svg_document(table: &CsvTable, spec: &PlotSpec) -> Result<String> {
    if table.rows.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "{} data row(s)",
            table.rows.len()
        )));
    }
    let series = collect_series(table, spec)?;
    if !series.iter().any(|s| s.points.len() >= 2) {
        return Err(Error::InsufficientData(
            "no series has two plottable points".into(),
        ));
    }
    let all = || series.iter().flat_map(|s| s.points.iter());
    let fold = |f: fn(&(f64, f64)) -> f64| {
        all()
            .map(f)
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
                (lo.min(v), hi.max(v))
            })
    };
    let ((x0, x1), xticks) = {
        let (lo, hi) = fold(|p| p.0);
        nice_ticks(lo, hi)
    };
    let ((y0, y1), yticks) = {
        let (lo, hi) = fold(|p| p.1);
        if spec.log_y {
            let (lo, hi) = (lo.floor(), hi.ceil().max(lo.floor() + 1.0));
            (
                (lo, hi),
                (lo as i64..=hi as i64).map(|p| p as f64).collect(),
            )
        } else {
            nice_ticks(lo, hi)
        }
    };

    let (left, right) = (0.1 * WIDTH, 0.9 * WIDTH);
    let (top, bottom) = (0.1 * HEIGHT, 0.9 * HEIGHT);
    let sx = |x: f64| left + (x - x0) / (x1 - x0) * (right - left);
    let sy = |y: f64| bottom - (y - y0) / (y1 - y0) * (bottom - top);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" viewBox="0 0 {WIDTH} {HEIGHT}" width="{WIDTH}" height="{HEIGHT}" font-family="sans-serif" font-size="13">"#
    );
    let _ = writeln!(
        s,
        r#"<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#
    );
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle" font-size="17">{}</text>"#,
        WIDTH / 2.0,
        top / 2.0,
        escape(&spec.title)
    );

    let xstep = xticks.get(1).map_or(1.0, |t| t - xticks[0]);
    let ystep = yticks.get(1).map_or(1.0, |t| t - yticks[0]);
    for &t in &xticks {
        let x = sx(t);
        let _ = writeln!(
            s,
            r##"<line x1="{x:.2}" y1="{top:.2}" x2="{x:.2}" y2="{bottom:.2}" stroke="#e0e0e0"/>"##
        );
        let _ = writeln!(
            s,
            r#"<text x="{x:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            bottom + 18.0,
            tick_label(t, xstep, false)
        );
    }
    for &t in &yticks {
        let y = sy(t);
        let _ = writeln!(
            s,
            r##"<line x1="{left:.2}" y1="{y:.2}" x2="{right:.2}" y2="{y:.2}" stroke="#e0e0e0"/>"##
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#,
            left - 6.0,
            y + 4.0,
            tick_label(t, ystep, spec.log_y)
        );
    }
    let _ = writeln!(
        s,
        r##"<rect x="{left:.2}" y="{top:.2}" width="{:.2}" height="{:.2}" fill="none" stroke="#333333"/>"##,
        right - left,
        bottom - top
    );
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
        (left + right) / 2.0,
        HEIGHT - 12.0,
        escape(&spec.x.label)
    );
    let ylabel = if spec.log_y {
        format!("{} (log scale)", spec.y_label)
    } else {
        spec.y_label.clone()
    };
    let _ = writeln!(
        s,
        r#"<text x="18" y="{:.2}" text-anchor="middle" transform="rotate(-90 18 {:.2})">{}</text>"#,
        (top + bottom) / 2.0,
        (top + bottom) / 2.0,
        escape(&ylabel)
    );

    for series in series.iter().filter(|s| s.points.len() >= 2) {
        let (color, dash, width) = kind_style(&series.name);
        let points: Vec<String> = series
            .points
            .iter()
            .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
            .collect();
        let dash_attr = if dash.is_empty() {
            String::new()
        } else {
            format!(r#" stroke-dasharray="{dash}""#)
        };
        let _ = writeln!(
            s,
            r#"<polyline fill="none" stroke="{color}" stroke-width="{width}"{dash_attr} points="{}"/>"#,
            points.join(" ")
        );
    }

    // legend, top right inside the plot area
    let lx = right - 130.0;
    for (i, series) in series.iter().enumerate() {
        let (color, dash, width) = kind_style(&series.name);
        let y = top + 18.0 + 18.0 * i as f64;
        let dash_attr = if dash.is_empty() {
            String::new()
        } else {
            format!(r#" stroke-dasharray="{dash}""#)
        };
        let _ = writeln!(
            s,
            r#"<line x1="{lx:.2}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="{color}" stroke-width="{width}"{dash_attr}/>"#,
            lx + 30.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}">{}</text>"#,
            lx + 38.0,
            y + 4.0,
            escape(&series.name)
        );
    }
    s.push_str("</svg>\n");
    Ok(s)
}

pub fn render_svg(table: &CsvTable, spec: &PlotSpec, path: &Path) -> Result<()> {
    write_atomic(path, svg_document(table, spec)?.as_bytes())
}
