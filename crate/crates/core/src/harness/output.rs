//! CSV and summary emission. Floats use Rust's locale-free `{:e}` format.

use std::fmt::Display;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::landscape::norm;
use crate::sgd_engine::TrajectoryRecord;

pub const CSV_HEADER: &str = "replica,n,t_n,F,gradnorm,xnorm,in_locality,excess_ok,above_dropout";

fn bit(b: bool) -> u8 {
    u8::from(b)
}

/// Writes the per-step CSV ordered by replica id, then `n`. The initial
/// point `n = 0` is not a step and is omitted.
pub fn emit_csv(records: &[(usize, &TrajectoryRecord)], path: &Path) -> Result<()> {
    let io = |e| Error::io(path, e);
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    writeln!(w, "{CSV_HEADER}").map_err(io)?;
    let mut sorted: Vec<&(usize, &TrajectoryRecord)> = records.iter().collect();
    sorted.sort_by_key(|r| r.0);
    for (replica, rec) in sorted {
        for p in rec.points.iter().filter(|p| p.n > 0) {
            writeln!(
                w,
                "{},{},{:e},{:e},{:e},{:e},{},{},{}",
                replica,
                p.n,
                p.t,
                p.value,
                p.grad_norm,
                norm(&p.x),
                bit(p.flags.in_locality),
                bit(p.flags.excess_ok),
                bit(p.flags.above_dropout)
            )
            .map_err(io)?;
        }
    }
    w.flush().map_err(io)
}

/// Writes a CSV with the given header and pre-formatted rows.
pub fn write_table(path: &Path, header: &str, rows: &[String]) -> Result<()> {
    let mut text = String::with_capacity(header.len() + 1 + rows.iter().map(|r| r.len() + 1).sum::<usize>());
    text.push_str(header);
    text.push('\n');
    for r in rows {
        text.push_str(r);
        text.push('\n');
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Ordered `key=value` lines.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Summary {
    pub lines: Vec<(String, String)>,
}

impl Summary {
    pub fn push(&mut self, key: &str, value: impl Display) {
        self.lines.push((key.to_string(), value.to_string()));
    }

    /// Appends every `key=value` line of a block.
    pub fn extend_kv(&mut self, block: &str) {
        for line in block.lines() {
            if let Some((k, v)) = line.split_once('=') {
                self.push(k, v);
            }
        }
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.lines
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn to_text(&self) -> String {
        self.lines.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}
