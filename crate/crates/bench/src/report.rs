//! Markdown and CSV emission. Result CSVs carry no timing so that a fixed
//! seed reproduces them byte for byte; timing goes to a sidecar file.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn to_csv(&self) -> Result<String> {
        let mut out = String::new();
        for line in std::iter::once(&self.columns).chain(&self.rows) {
            ensure!(line.len() == self.columns.len(), "row has {} cells, expected {}", line.len(), self.columns.len());
            if let Some(bad) = line.iter().find(|c| c.contains([',', '"', '\n'])) {
                bail!("cell '{bad}' needs quoting, which this writer does not do");
            }
            out.push_str(&line.join(","));
            out.push('\n');
        }
        Ok(out)
    }

    fn to_markdown(&self) -> String {
        let mut out = format!("| {} |\n", self.columns.join(" | "));
        let _ = writeln!(out, "|{}", "---|".repeat(self.columns.len()));
        for r in &self.rows {
            let _ = writeln!(out, "| {} |", r.join(" | "));
        }
        out
    }
}

/// Parses the writer's own CSV dialect (no quoting).
pub fn parse_csv(text: &str) -> Result<Table> {
    let mut lines = text.lines();
    let header = lines.next().context("empty CSV")?;
    let columns: Vec<String> = header.split(',').map(String::from).collect();
    let rows: Vec<Vec<String>> = lines.map(|l| l.split(',').map(String::from).collect()).collect();
    for (i, r) in rows.iter().enumerate() {
        ensure!(r.len() == columns.len(), "CSV row {} has {} cells, expected {}", i + 1, r.len(), columns.len());
    }
    Ok(Table { columns, rows })
}

#[derive(Clone, Debug, PartialEq)]
pub struct Report {
    pub title: String,
    pub config: Vec<(String, String)>,
    pub table: Table,
    pub timing: Table,
    pub notes: Vec<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReportPaths {
    pub csv: PathBuf,
    pub markdown: PathBuf,
    pub timing: PathBuf,
}

/// Fixed-precision float formatting used for every reported number.
pub fn fmt_f(x: f64, digits: usize) -> String {
    let s = format!("{x:.digits$}");
    // Avoid "-0.0000" for values that round to zero.
    if s.starts_with('-') && s[1..].chars().all(|c| c == '0' || c == '.') {
        s[1..].to_string()
    } else {
        s
    }
}

pub fn build_id() -> String {
    match option_env!("DIFUADA_BUILD_ID") {
        Some(id) => id.to_string(),
        None => format!("difuada-{}", env!("CARGO_PKG_VERSION")),
    }
}

pub fn render_markdown(report: &Report) -> String {
    let mut md = format!("# {}\n\nbuild: `{}`\n\n## Config\n\n", report.title, build_id());
    for (k, v) in &report.config {
        let _ = writeln!(md, "- {k}: {v}");
    }
    md.push_str("\n## Results\n\n");
    md.push_str(&report.table.to_markdown());
    if !report.notes.is_empty() {
        md.push('\n');
        for n in &report.notes {
            let _ = writeln!(md, "- {n}");
        }
    }
    md
}

/// Writes `<stem>.csv`, `<stem>.md` and `<stem>_timing.csv` under `dir`.
pub fn emit_report(report: &Report, dir: &Path, stem: &str) -> Result<ReportPaths> {
    ensure!(!report.table.rows.is_empty(), "refusing to emit an empty report");
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let paths = ReportPaths {
        csv: dir.join(format!("{stem}.csv")),
        markdown: dir.join(format!("{stem}.md")),
        timing: dir.join(format!("{stem}_timing.csv")),
    };
    let write = |p: &Path, s: String| std::fs::write(p, s).with_context(|| format!("writing {}", p.display()));
    write(&paths.csv, report.table.to_csv()?)?;
    write(&paths.markdown, render_markdown(report))?;
    write(&paths.timing, report.timing.to_csv()?)?;
    Ok(paths)
}
