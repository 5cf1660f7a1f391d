//! Result tables and sweep plots: one CSV of every metric value and SVG
//! charts with the percent of added synthetic data on the lower axis and the
//! absolute synthetic image count on the upper axis.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataprep::synthetic_count;
use crate::error::{Error, Result};
use crate::metrics::{csv_writer, DatasetEvaluation, EvalMode};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub dataset: String,
    pub percent: u32,
    pub synthetic_count: usize,
    pub metric: String,
    /// In percent, e.g. 97.5.
    pub value: f64,
    pub is_baseline: bool,
}

impl SweepResult {
    /// Flattens one evaluation into rows for accuracy, mIoU, Missing Class
    /// IoU and every defined per-class IoU. `dataset` is the sweep family
    /// name and `base_train` the real training-set size the percent refers to.
    pub fn from_evaluation(eval: &DatasetEvaluation, dataset: &str, base_train: usize, mode: EvalMode) -> Vec<Self> {
        let a = eval.aggregate(mode);
        let row = |metric: String, value: f64| SweepResult {
            dataset: dataset.to_string(),
            percent: eval.percent,
            synthetic_count: synthetic_count(base_train, eval.percent),
            metric,
            value: value * 100.0,
            is_baseline: eval.percent == 0,
        };
        let mut out = vec![
            row("accuracy".into(), a.accuracy),
            row("miou".into(), a.miou),
            row("missing_class_iou".into(), a.missing_class_iou),
        ];
        for (c, v) in a.per_class.iter().enumerate() {
            if let Some(v) = v {
                out.push(row(per_class_metric(c), *v));
            }
        }
        out
    }
}

pub fn per_class_metric(class: usize) -> String {
    format!("iou_class_{class}")
}

/// One row per result, columns
/// `dataset,percent,synthetic_count,metric,value,is_baseline`.
pub fn write_metrics_csv(results: &[SweepResult], path: &Path) -> Result<()> {
    let mut w = csv_writer(path)?;
    // Serializing the first row emits the header; an empty table needs it spelled out.
    if results.is_empty() {
        w.write_record(["dataset", "percent", "synthetic_count", "metric", "value", "is_baseline"])?;
    }
    for r in results {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_metrics_csv(path: &Path) -> Result<Vec<SweepResult>> {
    if !path.exists() {
        return Err(Error::MissingArtifact {
            path: path.to_path_buf(),
            what: "metrics table not found".into(),
        });
    }
    let mut reader = csv::Reader::from_path(path)?;
    reader
        .deserialize()
        .map(|row| row.map_err(Error::from))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct YRange {
    pub min: f64,
    pub max: f64,
}

impl YRange {
    pub fn new(min: f64, max: f64) -> Result<Self> {
        if !(min.is_finite() && max.is_finite() && min < max) {
            return Err(Error::invalid(format!("y range [{min}, {max}] is empty or not finite")));
        }
        Ok(YRange { min, max })
    }

    /// Accuracy plots zoom to [95, 100]; IoU-type metrics to [60, 100].
    pub fn default_for(metric: &str) -> Self {
        if metric == "accuracy" {
            YRange { min: 95.0, max: 100.0 }
        } else {
            YRange { min: 60.0, max: 100.0 }
        }
    }

    pub fn contains(&self, v: f64) -> bool {
        v.is_finite() && v >= self.min && v <= self.max
    }
}

/// Plot frame in SVG user units.
pub const FRAME_X: f64 = 80.0;
pub const FRAME_Y: f64 = 70.0;
pub const FRAME_W: f64 = 560.0;
pub const FRAME_H: f64 = 290.0;
const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 470.0;

const COLORS: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

/// Maps (percent, value) into the frame. The x domain pads the percent
/// range by 8% on each side so the baseline column is not on the border.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Layout {
    pub x_min: f64,
    pub x_max: f64,
    pub y: YRange,
}

impl Layout {
    fn for_percents(max_percent: u32, y: YRange) -> Self {
        let top = if max_percent == 0 { 100.0 } else { max_percent as f64 };
        let pad = top * 0.08;
        Layout {
            x_min: -pad,
            x_max: top + pad,
            y,
        }
    }

    pub fn x(&self, percent: f64) -> f64 {
        FRAME_X + FRAME_W * (percent - self.x_min) / (self.x_max - self.x_min)
    }

    pub fn y(&self, value: f64) -> f64 {
        FRAME_Y + FRAME_H * (self.y.max - value) / (self.y.max - self.y.min)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SvgPlot {
    pub svg: String,
    /// Human-readable descriptions of values left out of the geometry.
    pub omitted: Vec<String>,
    pub warnings: Vec<String>,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Stable color per dataset: a hash of the name picks the palette slot,
/// probing forward past slots already taken by names earlier in sort order.
fn dataset_colors(names: &BTreeSet<&str>) -> BTreeMap<String, &'static str> {
    let mut taken = BTreeSet::new();
    let mut out = BTreeMap::new();
    for name in names {
        let digest = Sha256::digest(name.as_bytes());
        let mut slot = digest[0] as usize % COLORS.len();
        if taken.len() < COLORS.len() {
            while taken.contains(&slot) {
                slot = (slot + 1) % COLORS.len();
            }
        }
        taken.insert(slot);
        out.insert(name.to_string(), COLORS[slot]);
    }
    out
}

fn f(v: f64) -> String {
    format!("{v:.3}")
}

/// Renders one metric's sweep. Each dataset's baseline (percent 0) becomes
/// a dashed horizontal line across the frame; every other result is a point.
/// Values outside `y` are left out and listed in the caption note.
pub fn render_sweep_svg(results: &[SweepResult], metric: &str, title: &str, y: YRange) -> Result<SvgPlot> {
    let rows: Vec<&SweepResult> = results.iter().filter(|r| r.metric == metric).collect();
    if rows.is_empty() {
        return Err(Error::invalid(format!("no results for metric {metric}")));
    }
    let mut rows = rows;
    rows.sort_by(|a, b| (a.dataset.as_str(), a.percent).cmp(&(b.dataset.as_str(), b.percent)));
    let datasets: BTreeSet<&str> = rows.iter().map(|r| r.dataset.as_str()).collect();
    let colors = dataset_colors(&datasets);
    let max_percent = rows.iter().map(|r| r.percent).max().unwrap_or(0);
    let layout = Layout::for_percents(max_percent, y);

    let mut omitted = Vec::new();
    let mut warnings = Vec::new();
    let mut body = String::new();

    // Axis ticks: lower axis in percent, upper axis in absolute counts.
    let mut counts: BTreeMap<u32, BTreeSet<usize>> = BTreeMap::new();
    for r in &rows {
        counts.entry(r.percent).or_default().insert(r.synthetic_count);
    }
    for (&p, cs) in &counts {
        let x = f(layout.x(p as f64));
        let bottom = FRAME_Y + FRAME_H;
        let _ = writeln!(
            body,
            r##"<line class="tick" x1="{x}" y1="{}" x2="{x}" y2="{}" stroke="#333"/>"##,
            f(bottom),
            f(bottom + 5.0)
        );
        let _ = writeln!(
            body,
            r#"<text class="lower-tick" x="{x}" y="{}" text-anchor="middle">{p}%</text>"#,
            f(bottom + 18.0)
        );
        let label = cs.iter().map(|c| c.to_string()).collect::<Vec<_>>().join("/");
        let _ = writeln!(
            body,
            r##"<line class="tick" x1="{x}" y1="{}" x2="{x}" y2="{}" stroke="#333"/>"##,
            f(FRAME_Y - 5.0),
            f(FRAME_Y)
        );
        let _ = writeln!(
            body,
            r#"<text class="upper-tick" x="{x}" y="{}" text-anchor="middle">{label}</text>"#,
            f(FRAME_Y - 9.0)
        );
    }
    for i in 0..=5 {
        let v = y.min + (y.max - y.min) * i as f64 / 5.0;
        let yy = f(layout.y(v));
        let _ = writeln!(
            body,
            r##"<line class="grid" x1="{}" y1="{yy}" x2="{}" y2="{yy}" stroke="#ddd"/>"##,
            f(FRAME_X),
            f(FRAME_X + FRAME_W)
        );
        let _ = writeln!(
            body,
            r#"<text class="y-tick" x="{}" y="{yy}" text-anchor="end" dominant-baseline="middle">{}</text>"#,
            f(FRAME_X - 6.0),
            format_tick(v)
        );
    }

    for name in &datasets {
        let color = colors[*name];
        let ds: Vec<&&SweepResult> = rows.iter().filter(|r| r.dataset == *name).collect();
        match ds.iter().find(|r| r.is_baseline) {
            Some(b) if y.contains(b.value) => {
                let yy = f(layout.y(b.value));
                let _ = writeln!(
                    body,
                    r#"<line class="baseline" data-dataset="{}" data-value="{}" x1="{}" y1="{yy}" x2="{}" y2="{yy}" stroke="{color}" stroke-width="2" stroke-dasharray="6 3"/>"#,
                    escape(name),
                    b.value,
                    f(FRAME_X),
                    f(FRAME_X + FRAME_W)
                );
            }
            Some(b) => omitted.push(format!("{name} baseline = {}", format_value(b.value))),
            None => warnings.push(format!("no baseline for {name}; reference line not drawn")),
        }
        for r in ds.iter().filter(|r| !r.is_baseline) {
            if !y.contains(r.value) {
                omitted.push(format!("{name} {}% = {}", r.percent, format_value(r.value)));
                continue;
            }
            let _ = writeln!(
                body,
                r#"<circle class="point" data-dataset="{}" data-percent="{}" data-value="{}" cx="{}" cy="{}" r="4.5" fill="{color}"/>"#,
                escape(name),
                r.percent,
                r.value,
                f(layout.x(r.percent as f64)),
                f(layout.y(r.value))
            );
        }
    }

    // Legend and caption notes below the lower axis labels.
    let mut legend_x = FRAME_X;
    let legend_y = FRAME_Y + FRAME_H + 52.0;
    for name in &datasets {
        let _ = writeln!(
            body,
            r#"<rect class="legend-swatch" x="{}" y="{}" width="12" height="12" fill="{}"/>"#,
            f(legend_x),
            f(legend_y - 10.0),
            colors[*name]
        );
        let _ = writeln!(
            body,
            r#"<text class="legend" x="{}" y="{}">{}</text>"#,
            f(legend_x + 16.0),
            f(legend_y),
            escape(name)
        );
        legend_x += 28.0 + 7.0 * name.chars().count() as f64;
    }
    let mut note_y = legend_y + 20.0;
    if !omitted.is_empty() {
        let _ = writeln!(
            body,
            r#"<text class="note" x="{}" y="{}">Not shown (outside [{}, {}]): {}</text>"#,
            f(FRAME_X),
            f(note_y),
            format_tick(y.min),
            format_tick(y.max),
            escape(&omitted.join("; "))
        );
        note_y += 16.0;
    }
    for w in &warnings {
        log::warn!("{metric} plot: {w}");
        let _ = writeln!(
            body,
            r#"<text class="warning" x="{}" y="{}">Warning: {}</text>"#,
            f(FRAME_X),
            f(note_y),
            escape(w)
        );
        note_y += 16.0;
    }

    let mut svg = String::new();
    let _ = writeln!(svg, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(svg, "<title>{}</title>", escape(title));
    let _ = writeln!(svg, r#"<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r##"<rect class="frame" x="{}" y="{}" width="{}" height="{}" fill="none" stroke="#333" data-x-domain="{} {}" data-y-domain="{} {}"/>"##,
        f(FRAME_X),
        f(FRAME_Y),
        f(FRAME_W),
        f(FRAME_H),
        layout.x_min,
        layout.x_max,
        y.min,
        y.max
    );
    let _ = writeln!(
        svg,
        r#"<text class="title" x="{}" y="20" text-anchor="middle" font-size="14">{}</text>"#,
        f(WIDTH / 2.0),
        escape(title)
    );
    let _ = writeln!(
        svg,
        r#"<text class="axis-label" x="{}" y="{}" text-anchor="middle">Synthetic images added</text>"#,
        f(FRAME_X + FRAME_W / 2.0),
        f(FRAME_Y - 26.0)
    );
    let _ = writeln!(
        svg,
        r#"<text class="axis-label" x="{}" y="{}" text-anchor="middle">Synthetic data added (%)</text>"#,
        f(FRAME_X + FRAME_W / 2.0),
        f(FRAME_Y + FRAME_H + 34.0)
    );
    let _ = writeln!(
        svg,
        r#"<text class="axis-label" x="20" y="{}" text-anchor="middle" transform="rotate(-90 20 {})">{} (%)</text>"#,
        f(FRAME_Y + FRAME_H / 2.0),
        f(FRAME_Y + FRAME_H / 2.0),
        escape(metric)
    );
    svg.push_str(&body);
    svg.push_str("</svg>\n");
    Ok(SvgPlot {
        svg,
        omitted,
        warnings,
    })
}

fn format_tick(v: f64) -> String {
    if v.fract() == 0.0 {
        format!("{v:.0}")
    } else {
        format!("{v:.1}")
    }
}

fn format_value(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.1}")
    } else {
        "Nan".into()
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn write_sweep_svg(results: &[SweepResult], metric: &str, y: YRange, path: &Path) -> Result<SvgPlot> {
    let plot = render_sweep_svg(results, metric, metric, y)?;
    write_text(path, &plot.svg)?;
    Ok(plot)
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PerClassOutput {
    pub files: Vec<PathBuf>,
    pub warnings: Vec<String>,
}

/// One sweep plot per class, `iou_class_<c>.svg` under `out_dir`. The y
/// range covers [0, 100] by default so all-zero sweeps stay visible.
/// Classes without any result are skipped with a warning.
pub fn render_per_class_svgs(
    results: &[SweepResult],
    num_classes: usize,
    y: Option<YRange>,
    out_dir: &Path,
) -> Result<PerClassOutput> {
    let y = y.unwrap_or(YRange { min: 0.0, max: 100.0 });
    let outcomes: Vec<Result<std::result::Result<PathBuf, String>>> = (0..num_classes)
        .into_par_iter()
        .map(|c| {
            let metric = per_class_metric(c);
            if !results.iter().any(|r| r.metric == metric) {
                return Ok(Err(format!("class {c} has no results; plot skipped")));
            }
            let path = out_dir.join(format!("{metric}.svg"));
            let plot = render_sweep_svg(results, &metric, &format!("IoU of class {c}"), y)?;
            write_text(&path, &plot.svg)?;
            Ok(Ok(path))
        })
        .collect();
    let mut out = PerClassOutput::default();
    for o in outcomes {
        match o? {
            Ok(path) => out.files.push(path),
            Err(w) => {
                log::warn!("{w}");
                out.warnings.push(w);
            }
        }
    }
    Ok(out)
}

/// A point read back from a rendered SVG.
#[derive(Debug, Clone, PartialEq)]
pub struct PlottedPoint {
    pub dataset: String,
    pub percent: u32,
    pub value: f64,
    pub cx: f64,
    pub cy: f64,
}

fn attr<'a>(element: &'a str, name: &str) -> Option<&'a str> {
    let key = format!(" {name}=\"");
    let start = element.find(&key)? + key.len();
    let len = element[start..].find('"')?;
    Some(&element[start..start + len])
}

fn unescape(s: &str) -> String {
    s.replace("&quot;", "\"")
        .replace("&lt;", "<")
        .replace("&gt;", ">")
        .replace("&amp;", "&")
}

/// Reads back every `point` circle of an SVG produced by `render_sweep_svg`.
pub fn parse_plotted_points(svg: &str) -> Result<Vec<PlottedPoint>> {
    let bad = |line: &str| Error::invalid(format!("malformed point element: {line}"));
    svg.lines()
        .filter(|l| l.starts_with(r#"<circle class="point""#))
        .map(|l| {
            let num = |name: &str| -> Result<f64> { attr(l, name).and_then(|v| v.parse().ok()).ok_or_else(|| bad(l)) };
            Ok(PlottedPoint {
                dataset: unescape(attr(l, "data-dataset").ok_or_else(|| bad(l))?),
                percent: attr(l, "data-percent").and_then(|v| v.parse().ok()).ok_or_else(|| bad(l))?,
                value: num("data-value")?,
                cx: num("cx")?,
                cy: num("cy")?,
            })
        })
        .collect()
}

/// Re-derives every plotted point from `results` and reports mismatches:
/// points whose value or position disagrees with the table, in-range rows
/// that were not plotted, and plotted points with no matching row.
pub fn cross_check(svg: &str, results: &[SweepResult], metric: &str, y: YRange) -> Result<Vec<String>> {
    let points = parse_plotted_points(svg)?;
    let rows: Vec<&SweepResult> = results.iter().filter(|r| r.metric == metric).collect();
    let layout = Layout::for_percents(rows.iter().map(|r| r.percent).max().unwrap_or(0), y);
    let mut problems = Vec::new();
    for p in &points {
        match rows
            .iter()
            .find(|r| !r.is_baseline && r.dataset == p.dataset && r.percent == p.percent)
        {
            None => problems.push(format!("plotted {} {}% has no table row", p.dataset, p.percent)),
            Some(r) => {
                if r.value != p.value {
                    problems.push(format!("{} {}%: plotted {} vs table {}", p.dataset, p.percent, p.value, r.value));
                }
                if (layout.x(r.percent as f64) - p.cx).abs() > 1e-3 || (layout.y(r.value) - p.cy).abs() > 1e-3 {
                    problems.push(format!("{} {}%: position off", p.dataset, p.percent));
                }
            }
        }
    }
    for r in rows.iter().filter(|r| !r.is_baseline && y.contains(r.value)) {
        if !points.iter().any(|p| p.dataset == r.dataset && p.percent == r.percent) {
            problems.push(format!("{} {}% in range but not plotted", r.dataset, r.percent));
        }
    }
    Ok(problems)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(dataset: &str, percent: u32, value: f64) -> SweepResult {
        SweepResult {
            dataset: dataset.into(),
            percent,
            synthetic_count: synthetic_count(16, percent),
            metric: "accuracy".into(),
            value,
            is_baseline: percent == 0,
        }
    }

    #[test]
    fn empty_table_is_header_only() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        write_metrics_csv(&[], &path).unwrap();
        assert_eq!(
            std::fs::read_to_string(&path).unwrap(),
            "dataset,percent,synthetic_count,metric,value,is_baseline\n"
        );
        assert!(read_metrics_csv(&path).unwrap().is_empty());
    }

    #[test]
    fn csv_round_trip_keeps_values_and_baseline_flag() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        let rows = vec![row("SHQ", 0, 97.123456789012), row("SHQ", 50, 0.1 + 0.2), row("BMQ, v2", 100, 99.0)];
        write_metrics_csv(&rows, &path).unwrap();
        assert_eq!(read_metrics_csv(&path).unwrap(), rows);
    }

    #[test]
    fn single_point_and_baseline() {
        let plot = render_sweep_svg(&[row("SHQ", 0, 97.0), row("SHQ", 50, 98.0)], "accuracy", "t", YRange::default_for("accuracy")).unwrap();
        assert_eq!(plot.svg.matches(r#"class="baseline""#).count(), 1);
        assert_eq!(plot.svg.matches(r#"class="point""#).count(), 1);
        assert!(plot.svg.starts_with("<?xml") && plot.svg.trim_end().ends_with("</svg>"));
        assert!(plot.omitted.is_empty() && plot.warnings.is_empty());
    }

    #[test]
    fn out_of_range_value_named_in_note() {
        let rows = [row("SHQ", 0, 97.0), row("SHQ", 50, 93.14), row("SHQ", 100, 98.0)];
        let plot = render_sweep_svg(&rows, "accuracy", "t", YRange::default_for("accuracy")).unwrap();
        assert_eq!(plot.svg.matches(r#"class="point""#).count(), 1);
        assert!(!plot.svg.contains(r#"data-value="93.14""#));
        assert!(plot.svg.contains("Not shown (outside [95, 100]): SHQ 50% = 93.1"));
    }

    #[test]
    fn missing_baseline_warns() {
        let plot = render_sweep_svg(&[row("SLQ", 75, 96.0)], "accuracy", "t", YRange::default_for("accuracy")).unwrap();
        assert_eq!(plot.warnings.len(), 1);
        assert!(plot.svg.contains(r#"class="warning""#));
        assert!(!plot.svg.contains(r#"class="baseline""#));
    }

    #[test]
    fn deterministic_bytes_and_cross_check() {
        let rows = [row("SHQ", 0, 97.0), row("SHQ", 50, 98.25), row("BLQ", 0, 96.0), row("BLQ", 300, 99.5)];
        let y = YRange::default_for("accuracy");
        let a = render_sweep_svg(&rows, "accuracy", "t", y).unwrap();
        assert_eq!(a, render_sweep_svg(&rows, "accuracy", "t", y).unwrap());
        assert!(cross_check(&a.svg, &rows, "accuracy", y).unwrap().is_empty());
        let mut tampered = rows.to_vec();
        tampered[1].value = 98.5;
        assert!(!cross_check(&a.svg, &tampered, "accuracy", y).unwrap().is_empty());
    }

    #[test]
    fn dataset_names_are_escaped() {
        let rows = [row("a<b>&\"c", 50, 97.0)];
        let svg = render_sweep_svg(&rows, "accuracy", "t", YRange::default_for("accuracy")).unwrap().svg;
        assert!(svg.contains("a&lt;b&gt;&amp;&quot;c"));
        assert_eq!(parse_plotted_points(&svg).unwrap()[0].dataset, "a<b>&\"c");
    }

    #[test]
    fn per_class_plots_keep_zero_sweeps_and_skip_empty_classes() {
        let dir = tempfile::tempdir().unwrap();
        let mut rows = Vec::new();
        for c in [0usize, 1, 3] {
            for p in [0u32, 50] {
                let mut r = row("SHQ", p, if c == 3 { 0.0 } else { 80.0 });
                r.metric = per_class_metric(c);
                rows.push(r);
            }
        }
        let out = render_per_class_svgs(&rows, 4, None, dir.path()).unwrap();
        assert_eq!(out.files.len(), 3);
        assert_eq!(out.warnings.len(), 1);
        let zero = std::fs::read_to_string(dir.path().join("iou_class_3.svg")).unwrap();
        assert_eq!(parse_plotted_points(&zero).unwrap()[0].value, 0.0);
    }

    #[test]
    fn rejects_empty_metric_and_bad_range() {
        assert!(render_sweep_svg(&[row("SHQ", 0, 97.0)], "miou", "t", YRange::default_for("miou")).is_err());
        assert!(YRange::new(5.0, 5.0).is_err());
    }
}
