//! Evaluation metrics and report rendering.

use std::fmt::Write as _;
use std::io::Read;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tuner::TuneReport;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub strategy: String,
    pub seed: u64,
    pub search_cost_ms: f64,
    pub end_latency_ms: f64,
    pub gain: f64,
    pub reduction: f64,
    pub cmat_percent: f64,
}

impl MetricRow {
    pub fn new(strategy: &str, seed: u64, search_cost_ms: f64, end_latency_ms: f64, gain: f64, reduction: f64) -> Self {
        MetricRow {
            strategy: strategy.to_string(),
            seed,
            search_cost_ms,
            end_latency_ms,
            gain,
            reduction,
            cmat_percent: cmat(gain, reduction),
        }
    }
}

/// Search-efficiency gain and latency reduction of `candidate` relative to
/// `reference`.
pub fn gain_and_reduction(reference: &TuneReport, candidate: &TuneReport) -> Result<(f64, f64)> {
    if reference.seed != candidate.seed {
        return Err(Error::MismatchedRuns(format!("seeds {} and {}", reference.seed, candidate.seed)));
    }
    let ids = |r: &TuneReport| r.tasks.iter().map(|t| t.task_id.clone()).collect::<Vec<_>>();
    if ids(reference) != ids(candidate) {
        return Err(Error::MismatchedRuns("task sets differ".into()));
    }
    if candidate.search_cost_ms <= 0.0 || candidate.end_to_end_latency_ms <= 0.0 {
        return Err(Error::MismatchedRuns("candidate has non-positive cost or latency".into()));
    }
    Ok((
        reference.search_cost_ms / candidate.search_cost_ms,
        reference.end_to_end_latency_ms / candidate.end_to_end_latency_ms,
    ))
}

pub fn cmat(gain: f64, reduction: f64) -> f64 {
    (gain * reduction - 1.0) * 100.0
}

/// One row per report, scored against the reference strategy at the same seed.
pub fn build_rows(reports: &[TuneReport], reference: &str) -> Result<Vec<MetricRow>> {
    reports
        .iter()
        .map(|r| {
            let base = reports
                .iter()
                .find(|b| b.strategy == reference && b.seed == r.seed)
                .ok_or_else(|| Error::MissingReferenceStrategy(format!("{reference} at seed {}", r.seed)))?;
            let (gain, reduction) = gain_and_reduction(base, r)?;
            Ok(MetricRow::new(&r.strategy, r.seed, r.search_cost_ms, r.end_to_end_latency_ms, gain, reduction))
        })
        .collect()
}

/// Median; the mean of the two middle values for even lengths. NaN if empty.
pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Markdown,
    PlotData,
}

impl std::str::FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(ReportFormat::Csv),
            "markdown" | "md" => Ok(ReportFormat::Markdown),
            "plot-data" | "plot" => Ok(ReportFormat::PlotData),
            other => Err(Error::Config(format!("unknown report format `{other}`"))),
        }
    }
}

const HEADER: [&str; 7] = ["strategy", "seed", "search_cost_ms", "end_latency_ms", "gain", "reduction", "cmat_percent"];

pub fn build_report(rows: &[MetricRow], format: ReportFormat) -> Result<Vec<u8>> {
    if rows.is_empty() {
        return Err(Error::EmptyRows);
    }
    match format {
        ReportFormat::Csv => csv_report(rows),
        ReportFormat::Markdown => Ok(markdown_report(rows).into_bytes()),
        ReportFormat::PlotData => Ok(plot_data(rows).into_bytes()),
    }
}

fn csv_report(rows: &[MetricRow]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| Error::Config(format!("csv: {e}")))?;
    }
    w.into_inner().map_err(|e| Error::Config(format!("csv: {e}")))
}

fn markdown_report(rows: &[MetricRow]) -> String {
    let cells: Vec<[String; 7]> = rows
        .iter()
        .map(|r| {
            [
                r.strategy.clone(),
                r.seed.to_string(),
                format!("{:.1}", r.search_cost_ms),
                format!("{:.4}", r.end_latency_ms),
                format!("{:.4}", r.gain),
                format!("{:.4}", r.reduction),
                format!("{:.2}", r.cmat_percent),
            ]
        })
        .collect();
    let mut width: [usize; 7] = HEADER.map(str::len);
    for row in &cells {
        for (w, c) in width.iter_mut().zip(row) {
            *w = (*w).max(c.len());
        }
    }
    let mut out = String::new();
    let line = |out: &mut String, row: &[String]| {
        out.push('|');
        for (i, c) in row.iter().enumerate() {
            // text left, numbers right
            if i == 0 {
                let _ = write!(out, " {c:<w$} |", w = width[i]);
            } else {
                let _ = write!(out, " {c:>w$} |", w = width[i]);
            }
        }
        out.push('\n');
    };
    line(&mut out, &HEADER.map(String::from));
    out.push('|');
    for (i, w) in width.iter().enumerate() {
        if i == 0 {
            let _ = write!(out, " {} |", "-".repeat(*w));
        } else {
            let _ = write!(out, " {}: |", "-".repeat(w - 1));
        }
    }
    out.push('\n');
    for row in &cells {
        line(&mut out, row);
    }
    out
}

/// Tab-separated `seed<TAB>cmat_percent` series, one block per strategy.
fn plot_data(rows: &[MetricRow]) -> String {
    let mut order: Vec<&str> = Vec::new();
    for r in rows {
        if !order.contains(&r.strategy.as_str()) {
            order.push(&r.strategy);
        }
    }
    let mut out = String::new();
    for (i, s) in order.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        let _ = writeln!(out, "# strategy\t{s}");
        out.push_str("seed\tcmat_percent\n");
        for r in rows.iter().filter(|r| r.strategy == *s) {
            let _ = writeln!(out, "{}\t{}", r.seed, r.cmat_percent);
        }
    }
    out
}

pub fn parse_csv<R: Read>(input: R) -> Result<Vec<MetricRow>> {
    let mut rd = csv::Reader::from_reader(input);
    let headers = rd.headers().map_err(|e| Error::Parse { line: 1, message: e.to_string() })?.clone();
    if headers.iter().ne(HEADER.iter().copied()) {
        return Err(Error::Parse { line: 1, message: format!("unexpected header {:?}", headers.iter().collect::<Vec<_>>()) });
    }
    rd.deserialize()
        .enumerate()
        .map(|(i, r)| r.map_err(|e| Error::Parse { line: i + 2, message: e.to_string() }))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn row(s: &str, seed: u64, g: f64, r: f64) -> MetricRow {
        MetricRow::new(s, seed, 1000.0 / g, 10.0 / r, g, r)
    }

    #[test]
    fn cmat_examples() {
        assert_eq!(cmat(1.0, 1.0), 0.0);
        assert!((cmat(1.478, 1.0) - 47.8).abs() < 1e-9);
        assert!((cmat(0.9, 1.0) + 10.0).abs() < 1e-9);
    }

    #[test]
    fn median_examples() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        assert!(median(&[]).is_nan());
    }

    #[test]
    fn single_row_csv_has_two_lines() {
        let out = build_report(&[row("a", 0, 1.0, 1.0)], ReportFormat::Csv).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert_eq!(text.lines().count(), 2);
        assert_eq!(text.lines().next().unwrap(), HEADER.join(","));
    }

    #[test]
    fn csv_quotes_awkward_labels() {
        let rows = vec![row("moses,\"odd\"", 1, 1.25, 0.8)];
        let out = build_report(&rows, ReportFormat::Csv).unwrap();
        assert!(String::from_utf8_lossy(&out).contains("\"moses,\"\"odd\"\"\""));
        assert_eq!(parse_csv(&out[..]).unwrap(), rows);
    }

    #[test]
    fn empty_rows_rejected() {
        for f in [ReportFormat::Csv, ReportFormat::Markdown, ReportFormat::PlotData] {
            assert!(matches!(build_report(&[], f), Err(Error::EmptyRows)));
        }
    }

    #[test]
    fn markdown_and_plot_layout() {
        let rows = vec![row("vanilla-finetune", 0, 1.0, 1.0), row("moses", 0, 1.2, 1.1), row("moses", 1, 1.3, 0.9)];
        let md = String::from_utf8(build_report(&rows, ReportFormat::Markdown).unwrap()).unwrap();
        let lens: Vec<usize> = md.lines().map(str::len).collect();
        assert!(lens.windows(2).all(|w| w[0] == w[1]));
        assert_eq!(md.lines().count(), 5);
        let plot = String::from_utf8(build_report(&rows, ReportFormat::PlotData).unwrap()).unwrap();
        let blocks: Vec<&str> = plot.split("\n\n").collect();
        assert_eq!(blocks.len(), 2);
        assert_eq!(blocks[1].lines().count(), 4);
    }

    proptest! {
        #[test]
        fn cmat_sign_and_symmetry(g in 1e-3f64..1e3, r in 1e-3f64..1e3) {
            prop_assert_eq!(cmat(g, r) > 0.0, g * r > 1.0);
            prop_assert_eq!(cmat(g, r), cmat(r, g));
        }

        #[test]
        fn csv_roundtrip(vals in proptest::collection::vec((0u64..100, 1e-3f64..1e6, 1e-3f64..1e3, 1e-2f64..1e2, 1e-2f64..1e2), 1..10)) {
            let rows: Vec<MetricRow> = vals.iter().map(|&(s, c, l, g, r)| MetricRow::new("x", s, c, l, g, r)).collect();
            let out = build_report(&rows, ReportFormat::Csv).unwrap();
            prop_assert_eq!(parse_csv(&out[..]).unwrap(), rows);
        }
    }
}
