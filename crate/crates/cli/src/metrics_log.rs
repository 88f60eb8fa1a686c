//! Long-format metrics CSV: `global_iter,task,metric,category,value`.

use std::path::{Path, PathBuf};

use mergan_core::strategies::MetricRow;

use crate::error::{CliError, Result};
use crate::fsutil;

pub const HEADER: &str = "global_iter,task,metric,category,value";

/// In-memory copy of a metrics file, rewritten atomically on every flush.
#[derive(Debug)]
pub struct MetricsLog {
    path: PathBuf,
    lines: Vec<String>,
}

pub fn format_row(r: &MetricRow) -> String {
    format!(
        "{},{},{},{},{}",
        r.global_iter, r.task, r.metric, r.category, r.value
    )
}

fn global_iter_of(line: &str) -> Option<u64> {
    line.split(',').next()?.parse().ok()
}

impl MetricsLog {
    /// A log with only the header.
    pub fn create(path: &Path) -> Self {
        Self {
            path: path.to_path_buf(),
            lines: Vec::new(),
        }
    }

    /// Loads an existing file, or starts empty if there is none.
    pub fn open(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Ok(Self::create(path));
        }
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let mut lines = text.lines();
        if lines.next() != Some(HEADER) {
            return Err(CliError::Config {
                path: path.to_path_buf(),
                line: 1,
                message: format!("metrics file does not start with {HEADER:?}"),
            });
        }
        Ok(Self {
            path: path.to_path_buf(),
            lines: lines.map(str::to_string).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.lines.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lines.is_empty()
    }

    /// Drops rows logged after `global_iter`.
    pub fn truncate_after(&mut self, global_iter: u64) {
        self.lines
            .retain(|l| global_iter_of(l).is_some_and(|g| g <= global_iter));
    }

    pub fn extend(&mut self, rows: &[MetricRow]) {
        self.lines.extend(rows.iter().map(format_row));
    }

    pub fn to_text(&self) -> String {
        let mut out = String::with_capacity(64 * (self.lines.len() + 1));
        out.push_str(HEADER);
        out.push('\n');
        for l in &self.lines {
            out.push_str(l);
            out.push('\n');
        }
        out
    }

    pub fn flush(&self) -> Result<()> {
        fsutil::write_atomic(&self.path, self.to_text().as_bytes())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(g: u64, metric: &'static str, value: f64) -> MetricRow {
        MetricRow {
            global_iter: g,
            task: 1,
            metric,
            category: 2,
            value,
        }
    }

    #[test]
    fn values_round_trip_as_text() {
        let r = row(100, "fd", 0.1 + 0.2);
        let line = format_row(&r);
        assert_eq!(line, "100,1,fd,2,0.30000000000000004");
        let v: f64 = line.rsplit(',').next().unwrap().parse().unwrap();
        assert_eq!(v, 0.1 + 0.2);
    }

    #[test]
    fn reopen_append_truncate() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("metrics.csv");
        let mut log = MetricsLog::open(&p).unwrap();
        assert!(log.is_empty());
        log.extend(&[row(100, "acc", 0.5), row(200, "acc", 0.75)]);
        log.flush().unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert_eq!(
            text,
            "global_iter,task,metric,category,value\n100,1,acc,2,0.5\n200,1,acc,2,0.75\n"
        );

        let mut again = MetricsLog::open(&p).unwrap();
        assert_eq!(again.len(), 2);
        again.truncate_after(150);
        again.extend(&[row(300, "acc", 1.0)]);
        again.flush().unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert_eq!(text.lines().count(), 3);
        assert!(text.ends_with("300,1,acc,2,1\n"));
    }

    #[test]
    fn rejects_foreign_files() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("metrics.csv");
        std::fs::write(&p, "a,b\n").unwrap();
        assert!(MetricsLog::open(&p).is_err());
    }
}
