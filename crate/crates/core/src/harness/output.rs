use std::path::Path;

use crate::error::{Result, UldError};
use crate::estimator::ReplicateResult;

/// A named numeric table written as `<name>.csv`.
#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub name: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn new(name: &str, header: &[&str]) -> Self {
        Self {
            name: name.to_string(),
            header: header.iter().map(|h| h.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<f64>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let j = self.header.iter().position(|h| h == name)?;
        Some(self.rows.iter().map(|r| r[j]).collect())
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(&self.header)?;
        for row in &self.rows {
            w.write_record(row.iter().map(|v| v.to_string()))?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Columns: `replicate_id, level, tau, cost_euler_steps, weight,
/// value_0..value_{p-1}, wall_time_s`. Floats are written in shortest
/// round-trip form.
pub fn write_replicate_csv(path: &Path, rows: &[ReplicateResult]) -> Result<()> {
    let width = rows.first().map_or(0, |r| r.value.len());
    let mut w = csv::Writer::from_path(path)?;
    let mut header: Vec<String> = ["replicate_id", "level", "tau", "cost_euler_steps", "weight"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    header.extend((0..width).map(|j| format!("value_{j}")));
    header.push("wall_time_s".into());
    w.write_record(&header)?;
    for r in rows {
        if r.value.len() != width {
            return Err(UldError::Dimension {
                what: "replicate value",
                expected: width,
                got: r.value.len(),
            });
        }
        let mut rec = vec![
            r.replicate_id.to_string(),
            r.level.to_string(),
            r.tau.to_string(),
            r.cost.to_string(),
            r.weight.to_string(),
        ];
        rec.extend(r.value.iter().map(|v| v.to_string()));
        rec.push(r.wall_time_s.to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a replicate CSV back; the Gaussian-draw counts are not stored and
/// come back as zero.
pub fn read_replicate_csv(path: &Path) -> Result<Vec<ReplicateResult>> {
    let mut r = csv::Reader::from_path(path)?;
    let header = r.headers()?.clone();
    let width = header.iter().filter(|h| h.starts_with("value_")).count();
    if header.len() != width + 6 {
        return Err(UldError::Config(format!("unexpected replicate CSV header {header:?}")));
    }
    let field = |rec: &csv::StringRecord, j: usize| -> Result<f64> {
        rec[j]
            .parse()
            .map_err(|_| UldError::Config(format!("bad number `{}` in column {}", &rec[j], &header[j])))
    };
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let int = |j: usize| -> Result<u64> {
            rec[j]
                .parse()
                .map_err(|_| UldError::Config(format!("bad integer `{}` in column {}", &rec[j], &header[j])))
        };
        out.push(ReplicateResult {
            replicate_id: int(0)?,
            level: int(1)? as u32,
            tau: int(2)? as usize,
            cost: int(3)?,
            weight: field(&rec, 4)?,
            value: (0..width).map(|j| field(&rec, 5 + j)).collect::<Result<_>>()?,
            gaussian_draws: 0,
            wall_time_s: field(&rec, 5 + width)?,
        });
    }
    Ok(out)
}
