//! Per-step metrics CSV: `step,d_loss,g_loss,proxy_fid,scale_0..,wall_ms`.
//!
//! Floats are written in shortest round-trip form, so equal runs give equal
//! bytes in every column except `wall_ms`.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::gan::{Callback, StepMetrics, Trainer};

pub fn metrics_header(n_scales: usize) -> String {
    let mut cols = vec!["step".to_string(), "d_loss".into(), "g_loss".into(), "proxy_fid".into()];
    cols.extend((0..n_scales).map(|i| format!("scale_{i}")));
    cols.push("wall_ms".into());
    cols.join(",")
}

pub struct MetricsCsv {
    path: PathBuf,
    file: File,
    n_scales: usize,
}

impl MetricsCsv {
    /// Starts a new file with a header.
    pub fn create(path: impl AsRef<Path>, n_scales: usize) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let mut file = File::create(&path).map_err(|e| Error::io(&path, e))?;
        writeln!(file, "{}", metrics_header(n_scales)).map_err(|e| Error::io(&path, e))?;
        Ok(MetricsCsv { path, file, n_scales })
    }

    /// Continues an existing file for a resumed run, dropping rows past `step`.
    pub fn resume(path: impl AsRef<Path>, n_scales: usize, step: u64) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let reader = BufReader::new(File::open(&path).map_err(|e| Error::io(&path, e))?);
        let mut kept = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| Error::io(&path, e))?;
            if i == 0 {
                if line != metrics_header(n_scales) {
                    return Err(Error::State(format!("{} has a different column layout", path.display())));
                }
            } else {
                let row_step: u64 = line
                    .split(',')
                    .next()
                    .and_then(|s| s.parse().ok())
                    .ok_or_else(|| Error::State(format!("{}: malformed row {}", path.display(), i + 1)))?;
                if row_step > step {
                    break;
                }
            }
            kept.push(line);
        }
        let mut text = kept.join("\n");
        text.push('\n');
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        let file = OpenOptions::new().append(true).open(&path).map_err(|e| Error::io(&path, e))?;
        Ok(MetricsCsv { path, file, n_scales })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn write(&mut self, m: &StepMetrics) -> Result<()> {
        if m.scales.len() != self.n_scales {
            return Err(Error::Parameter(format!(
                "{} scales for a file with {} scale columns",
                m.scales.len(),
                self.n_scales
            )));
        }
        let mut row = vec![m.step.to_string(), m.d_loss.to_string(), m.g_loss.to_string()];
        row.push(m.proxy_fid.map(|v| v.to_string()).unwrap_or_default());
        row.extend(m.scales.iter().map(|s| s.to_string()));
        row.push(format!("{:.3}", m.wall_ms));
        writeln!(self.file, "{}", row.join(",")).map_err(|e| Error::io(&self.path, e))?;
        self.file.flush().map_err(|e| Error::io(&self.path, e))
    }
}

impl Callback for MetricsCsv {
    fn after_step(&mut self, _trainer: &Trainer, metrics: &mut StepMetrics) -> Result<()> {
        self.write(metrics)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(step: u64) -> StepMetrics {
        StepMetrics {
            step,
            d_loss: 1.5,
            g_loss: -0.1,
            d_grad_norm: 0.0,
            g_grad_norm: 0.0,
            scales: vec![1.0, 2.5],
            proxy_fid: (step == 2).then_some(3.25),
            wall_ms: 12.0,
        }
    }

    #[test]
    fn header_and_rows() {
        assert_eq!(metrics_header(2), "step,d_loss,g_loss,proxy_fid,scale_0,scale_1,wall_ms");
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        let mut csv = MetricsCsv::create(&p, 2).unwrap();
        csv.write(&row(1)).unwrap();
        csv.write(&row(2)).unwrap();
        csv.write(&row(3)).unwrap();
        drop(csv);
        let text = std::fs::read_to_string(&p).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[1], "1,1.5,-0.1,,1,2.5,12.000");
        assert_eq!(lines[2], "2,1.5,-0.1,3.25,1,2.5,12.000");

        let mut csv = MetricsCsv::resume(&p, 2, 2).unwrap();
        csv.write(&row(3)).unwrap();
        drop(csv);
        assert_eq!(std::fs::read_to_string(&p).unwrap(), text);
        assert!(MetricsCsv::resume(&p, 3, 2).is_err());
    }
}
