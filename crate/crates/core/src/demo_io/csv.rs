//! Plain-text demonstration files.
//!
//! One header row `t,<channels...>`, one row per sample, demonstrations
//! separated by a blank line. A repeated header after a separator is
//! accepted. A directory is read as one or more such files in name order.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{ChannelSchema, Demonstration, DemonstrationSet, StateSample};
use crate::error::{Error, Result};

pub fn load_demonstrations(
    path: impl AsRef<Path>,
    schema: &ChannelSchema,
    sample_rate: f64,
) -> Result<DemonstrationSet> {
    let path = path.as_ref();
    let meta = fs::metadata(path).map_err(|e| Error::io(path, e))?;
    let mut demos = Vec::new();
    if meta.is_dir() {
        let mut files: Vec<_> = fs::read_dir(path)
            .map_err(|e| Error::io(path, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "csv"))
            .collect();
        files.sort();
        for f in files {
            let text = fs::read_to_string(&f).map_err(|e| Error::io(&f, e))?;
            demos.extend(parse_blocks(&text, schema, sample_rate)?);
        }
    } else {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        demos = parse_blocks(&text, schema, sample_rate)?;
    }
    DemonstrationSet::new(demos, schema.clone())
}

/// Parses demonstration text held in memory.
pub fn parse_demonstrations(
    text: &str,
    schema: &ChannelSchema,
    sample_rate: f64,
) -> Result<DemonstrationSet> {
    DemonstrationSet::new(parse_blocks(text, schema, sample_rate)?, schema.clone())
}

fn parse_blocks(text: &str, schema: &ChannelSchema, sample_rate: f64) -> Result<Vec<Demonstration>> {
    let mut demos = Vec::new();
    let mut current: Vec<StateSample> = Vec::new();
    let mut seen_header = false;
    let width = schema.len() + 1;

    let flush = |current: &mut Vec<StateSample>, demos: &mut Vec<Demonstration>| -> Result<()> {
        if !current.is_empty() {
            let rows = std::mem::take(current);
            demos.push(Demonstration::from_raw(rows, sample_rate, schema)?);
        }
        Ok(())
    };

    for (i, line) in text.lines().enumerate() {
        let row = i + 1;
        let line = line.trim();
        if line.is_empty() {
            flush(&mut current, &mut demos)?;
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields[0] == "t" {
            check_header(&fields, schema, row)?;
            seen_header = true;
            continue;
        }
        if !seen_header {
            return Err(Error::Parse {
                row,
                message: "data before header row".into(),
            });
        }
        if fields.len() != width {
            return Err(Error::Schema(format!(
                "row {row} has {} columns, header declares {width}",
                fields.len()
            )));
        }
        let mut nums = Vec::with_capacity(width);
        for f in &fields {
            let v: f64 = f.parse().map_err(|_| Error::Parse {
                row,
                message: format!("`{f}` is not a number"),
            })?;
            nums.push(v);
        }
        current.push(StateSample {
            t: nums[0],
            values: nums[1..].to_vec(),
        });
    }
    flush(&mut current, &mut demos)?;
    Ok(demos)
}

fn check_header(fields: &[&str], schema: &ChannelSchema, row: usize) -> Result<()> {
    let names = &fields[1..];
    if names.len() != schema.len() || names.iter().zip(&schema.names).any(|(a, b)| a != b) {
        return Err(Error::Schema(format!(
            "header at row {row} is `{}`, expected `t,{}`",
            fields.join(","),
            schema.names.join(",")
        )));
    }
    Ok(())
}

/// Renders a set in the canonical text form.
pub fn write_demonstrations(set: &DemonstrationSet) -> String {
    let mut out = String::new();
    for (i, d) in set.demos().iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        let _ = writeln!(out, "t,{}", set.channel_names().join(","));
        for s in d.samples() {
            let _ = write!(out, "{}", s.t);
            for v in &s.values {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
    }
    out
}

pub fn save_demonstrations(set: &DemonstrationSet, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, write_demonstrations(set)).map_err(|e| Error::io(path, e))
}
