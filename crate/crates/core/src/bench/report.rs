use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use super::run::{RunReport, SuiteReport};

/// Result-table row names, in order.
pub const ROW_NAMES: [&str; 7] = [
    "Messages per second",
    "The overall number of messages",
    "Number of different devices",
    "Message size",
    "Overall duration [ms]",
    "Batch",
    "Sleep [ms]",
];

/// CSV header. "Message size" is split into min and max columns.
pub const CSV_HEADER: &str = "repetition,scenario,Messages per second,The overall number of messages,\
Number of different devices,Message size min,Message size max,Overall duration [ms],Batch,Sleep [ms],\
loss,duplicates";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Table,
    Csv,
    Json,
    Svg,
}

impl FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "table" => Ok(ReportFormat::Table),
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            "svg" => Ok(ReportFormat::Svg),
            other => Err(format!("unknown format {other:?} (table, csv, json, svg)")),
        }
    }
}

pub fn render(suite: &SuiteReport, format: ReportFormat) -> String {
    match format {
        ReportFormat::Table => render_table(suite),
        ReportFormat::Csv => render_csv(suite),
        ReportFormat::Json => {
            let mut s = serde_json::to_string_pretty(suite).expect("report serializes");
            s.push('\n');
            s
        }
        ReportFormat::Svg => render_svg(suite),
    }
}

/// Writes the rendered report to `path`, or stdout when `None`.
pub fn emit_report(
    suite: &SuiteReport,
    format: ReportFormat,
    path: Option<&Path>,
) -> std::io::Result<()> {
    let text = render(suite, format);
    match path {
        Some(p) => std::fs::write(p, text),
        None => {
            use std::io::Write;
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes())?;
            out.flush()
        }
    }
}

fn row_values(r: &RunReport) -> [String; 7] {
    [
        format!("{:.1}", r.messages_per_second),
        r.total_messages.to_string(),
        r.device_count.to_string(),
        format!("{} - {} chars", r.message_size.min, r.message_size.max),
        format!("{:.1}", r.overall_duration_ms),
        r.num_batches.to_string(),
        r.sleep_ms.to_string(),
    ]
}

fn render_table(suite: &SuiteReport) -> String {
    let mut rows: Vec<(String, Vec<String>)> = std::iter::once("Test parameter")
        .chain(ROW_NAMES)
        .chain(["Loss", "Duplicates"])
        .map(|name| (name.to_string(), Vec::new()))
        .collect();
    for r in &suite.runs {
        let header = match &r.scenario {
            Some(name) => format!("{name} #{}", r.repetition + 1),
            None => format!("Run {}", r.repetition + 1),
        };
        let values = row_values(r);
        let cells = std::iter::once(header)
            .chain(values)
            .chain([r.loss.to_string(), r.duplicates.to_string()]);
        for (row, cell) in rows.iter_mut().zip(cells) {
            row.1.push(cell);
        }
    }
    let name_width = rows.iter().map(|r| r.0.len()).max().unwrap_or(0);
    let col_widths: Vec<usize> = (0..suite.runs.len())
        .map(|i| rows.iter().map(|r| r.1[i].len()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for (name, cells) in &rows {
        let _ = write!(out, "{name:<name_width$}");
        for (cell, w) in cells.iter().zip(&col_widths) {
            let _ = write!(out, "  {cell:>w$}");
        }
        out.push('\n');
    }
    let _ = writeln!(
        out,
        "\nThroughput relative spread: {:.4}",
        suite.throughput_relative_spread
    );
    for c in &suite.checks {
        let _ = writeln!(
            out,
            "[{}] {}: {}",
            if c.pass { "PASS" } else { "FAIL" },
            c.name,
            c.detail
        );
    }
    let _ = writeln!(out, "{}", if suite.passed { "PASSED" } else { "FAILED" });
    out
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn render_csv(suite: &SuiteReport) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in &suite.runs {
        let _ = writeln!(
            out,
            "{},{},{:.1},{},{},{},{},{:.1},{},{},{},{}",
            r.repetition + 1,
            csv_field(r.scenario.as_deref().unwrap_or("")),
            r.messages_per_second,
            r.total_messages,
            r.device_count,
            r.message_size.min,
            r.message_size.max,
            r.overall_duration_ms,
            r.num_batches,
            r.sleep_ms,
            r.loss,
            r.duplicates
        );
    }
    out
}

const SVG_W: f64 = 640.0;
const SVG_H: f64 = 400.0;
const MARGIN: f64 = 60.0;

/// Throughput (y) against total messages (x).
fn render_svg(suite: &SuiteReport) -> String {
    let mut points: Vec<(f64, f64)> = suite
        .runs
        .iter()
        .map(|r| (r.total_messages as f64, r.messages_per_second))
        .collect();
    points.sort_by(|a, b| a.0.total_cmp(&b.0));
    let x_max = nice_ceiling(points.iter().map(|p| p.0).fold(0.0, f64::max) * 1.1);
    let y_max = nice_ceiling(points.iter().map(|p| p.1).fold(0.0, f64::max) * 1.2);
    let plot_w = SVG_W - 2.0 * MARGIN;
    let plot_h = SVG_H - 2.0 * MARGIN;
    let sx = |x: f64| MARGIN + x / x_max * plot_w;
    let sy = |y: f64| SVG_H - MARGIN - y / y_max * plot_h;

    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SVG_W}" height="{SVG_H}" viewBox="0 0 {SVG_W} {SVG_H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<text x="{}" y="24" text-anchor="middle" font-size="14">Messages per second vs. overall number of messages</text>"#,
        SVG_W / 2.0
    );
    let (x0, y0) = (sx(0.0), sy(0.0));
    let _ = writeln!(
        out,
        r#"<line x1="{x0}" y1="{y0}" x2="{}" y2="{y0}" stroke="black"/>"#,
        sx(x_max)
    );
    let _ = writeln!(
        out,
        r#"<line x1="{x0}" y1="{y0}" x2="{x0}" y2="{}" stroke="black"/>"#,
        sy(y_max)
    );
    for i in 0..=5 {
        let xv = x_max * i as f64 / 5.0;
        let yv = y_max * i as f64 / 5.0;
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
            sx(xv),
            y0 + 18.0,
            xv.round()
        );
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"#,
            x0 - 6.0,
            sy(yv) + 4.0,
            yv.round()
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{}" y="{}" text-anchor="middle">The overall number of messages</text>"#,
        SVG_W / 2.0,
        SVG_H - 16.0
    );
    let _ = writeln!(
        out,
        r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">Messages per second</text>"#,
        SVG_H / 2.0,
        SVG_H / 2.0
    );
    if points.len() > 1 {
        let path: Vec<String> = points
            .iter()
            .map(|&(x, y)| format!("{:.1},{:.1}", sx(x), sy(y)))
            .collect();
        let _ = writeln!(
            out,
            r#"<polyline points="{}" fill="none" stroke="steelblue" stroke-width="2"/>"#,
            path.join(" ")
        );
    }
    for &(x, y) in &points {
        let _ = writeln!(
            out,
            r#"<circle class="point" cx="{:.1}" cy="{:.1}" r="4" fill="steelblue" data-total="{x}" data-throughput="{y}"/>"#,
            sx(x),
            sy(y)
        );
    }
    out.push_str("</svg>\n");
    out
}

/// Smallest 1/2/5 x 10^k at or above `v`.
fn nice_ceiling(v: f64) -> f64 {
    if v <= 0.0 {
        return 1.0;
    }
    let mag = 10f64.powf(v.log10().floor());
    [1.0, 2.0, 5.0, 10.0]
        .into_iter()
        .map(|m| m * mag)
        .find(|&c| c >= v)
        .unwrap_or(10.0 * mag)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bench::run::{Check, MessageSize};
    use crate::codec::QoS;
    use crate::simgen::PayloadMode;

    fn run(total: u64, tp: f64, ms: f64, batches: u64) -> RunReport {
        RunReport {
            messages_per_second: tp,
            total_messages: total,
            device_count: 10,
            message_size: MessageSize { min: 19, max: 126 },
            overall_duration_ms: ms,
            num_batches: batches,
            sleep_ms: 950,
            loss: 0,
            duplicates: 0,
            repetition: 0,
            scenario: Some(format!("{total} messages")),
            workers: 10,
            qos: QoS::AtLeastOnce,
            mode: PayloadMode::Canonical,
            unique_received: total,
            out_of_order: 0,
            retransmitted: 0,
            receipt_duration_ms: ms,
            latency: None,
            broker_routed_at_start: Some(0),
            sustained: None,
        }
    }

    fn suite() -> SuiteReport {
        SuiteReport::from_parts(
            vec![
                run(50_000, 5_270.5, 9_486.8, 10),
                run(100_000, 5_024.3, 19_903.2, 20),
                run(150_000, 4_937.9, 30_377.4, 30),
            ],
            vec![Check {
                name: "linearity".into(),
                pass: true,
                detail: String::new(),
            }],
            None,
        )
    }

    #[test]
    fn json_uses_row_names() {
        let v: serde_json::Value =
            serde_json::from_str(&render(&suite(), ReportFormat::Json)).unwrap();
        let first = v["runs"][0].as_object().unwrap();
        for name in ROW_NAMES {
            assert!(first.contains_key(name), "missing {name}");
        }
        assert_eq!(first["Messages per second"], 5_270.5);
        assert_eq!(first["Message size"]["max"], 126);
        let back: SuiteReport = serde_json::from_value(v).unwrap();
        assert_eq!(back, suite());
    }

    #[test]
    fn csv_layout() {
        let csv = render(&suite(), ReportFormat::Csv);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], CSV_HEADER);
        assert_eq!(lines.len(), 4);
        assert_eq!(
            lines[1],
            "1,50000 messages,5270.5,50000,10,19,126,9486.8,10,950,0,0"
        );
        assert_eq!(CSV_HEADER.split(',').count(), lines[1].split(',').count());
    }

    #[test]
    fn table_has_every_row() {
        let t = render(&suite(), ReportFormat::Table);
        for name in ROW_NAMES {
            assert!(t.lines().any(|l| l.starts_with(name)), "missing {name}");
        }
        assert!(t.contains("19 - 126 chars"));
        assert!(t.contains("9486.8"));
        assert!(t.contains("PASSED"));
    }

    #[test]
    fn svg_plots_each_run() {
        let svg = render(&suite(), ReportFormat::Svg);
        assert!(svg.starts_with("<svg"));
        assert_eq!(svg.matches(r#"class="point""#).count(), 3);
        for x in ["50000", "100000", "150000"] {
            assert!(svg.contains(&format!(r#"data-total="{x}""#)));
        }
    }

    #[test]
    fn spread_and_formats() {
        assert!((suite().throughput_relative_spread - 0.0631).abs() < 5e-5);
        assert_eq!("svg".parse(), Ok(ReportFormat::Svg));
        assert!("xml".parse::<ReportFormat>().is_err());
        assert_eq!(nice_ceiling(165_000.0), 200_000.0);
        assert_eq!(nice_ceiling(6_324.6), 10_000.0);
    }

    #[test]
    fn unwritable_path() {
        let p = Path::new("/nonexistent-dir/report.json");
        assert!(emit_report(&suite(), ReportFormat::Json, Some(p)).is_err());
    }
}
