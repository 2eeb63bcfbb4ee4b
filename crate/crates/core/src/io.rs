//! Plain-text table helpers shared by every file format in the crate.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::potentials::{Configuration, LabeledSample};

/// Round-trippable decimal with 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn parse_f64(s: &str, path: &Path, line: usize) -> Result<f64> {
    s.trim().parse::<f64>().map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line,
        message: format!("`{s}`: {e}"),
    })
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    w.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn dataset_header(d: usize, extra: Option<&str>) -> String {
    let mut cols: Vec<String> = (1..=d).map(|i| format!("x{i}")).collect();
    cols.push("energy".into());
    cols.extend((1..=d).map(|i| format!("f{i}")));
    if let Some(e) = extra {
        cols.push(e.into());
    }
    cols.join(",")
}

fn sample_row(s: &LabeledSample) -> String {
    s.configuration
        .coords
        .iter()
        .chain(std::iter::once(&s.energy))
        .chain(&s.forces)
        .map(|&v| fmt_f64(v))
        .collect::<Vec<_>>()
        .join(",")
}

/// Dataset CSV: `x1,...,xd,energy,f1,...,fd`.
pub fn dataset_to_csv(samples: &[LabeledSample]) -> String {
    let d = samples.first().map_or(0, |s| s.configuration.dim());
    let mut out = dataset_header(d, None);
    out.push('\n');
    for s in samples {
        out.push_str(&sample_row(s));
        out.push('\n');
    }
    out
}

pub fn write_dataset(path: &Path, samples: &[LabeledSample]) -> Result<()> {
    write_text(path, &dataset_to_csv(samples))
}

/// Candidate CSV: the dataset columns plus `source`.
pub fn candidates_to_csv(rows: &[(LabeledSample, &str)]) -> String {
    let d = rows.first().map_or(0, |(s, _)| s.configuration.dim());
    let mut out = dataset_header(d, Some("source"));
    out.push('\n');
    for (s, source) in rows {
        out.push_str(&sample_row(s));
        out.push_str(&format!(",{source}\n"));
    }
    out
}

pub fn parse_dataset(text: &str, path: &Path) -> Result<Vec<LabeledSample>> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| Error::Parse {
        path: path.to_path_buf(),
        line: 1,
        message: "empty dataset file".into(),
    })?;
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    let d = cols.iter().filter(|c| c.starts_with('x')).count();
    if cols.len() < 2 * d + 1 || cols.get(d) != Some(&"energy") || d == 0 {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            message: format!("unexpected header `{header}`"),
        });
    }
    let mut out = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() < 2 * d + 1 {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                message: format!("expected {} fields, found {}", 2 * d + 1, fields.len()),
            });
        }
        let nums = fields[..2 * d + 1]
            .iter()
            .map(|f| parse_f64(f, path, i + 1))
            .collect::<Result<Vec<f64>>>()?;
        out.push(LabeledSample {
            configuration: Configuration::new(nums[..d].to_vec()),
            energy: nums[d],
            forces: nums[d + 1..].to_vec(),
        });
    }
    Ok(out)
}

pub fn read_dataset(path: &Path) -> Result<Vec<LabeledSample>> {
    parse_dataset(&read_text(path)?, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn dataset_round_trip_is_bit_exact(
            rows in prop::collection::vec(prop::collection::vec(-1e6f64..1e6, 5), 1..20)
        ) {
            let samples: Vec<LabeledSample> = rows
                .iter()
                .map(|r| LabeledSample {
                    configuration: Configuration::new(r[..2].to_vec()),
                    energy: r[2],
                    forces: r[3..].to_vec(),
                })
                .collect();
            let text = dataset_to_csv(&samples);
            let back = parse_dataset(&text, Path::new("mem")).unwrap();
            prop_assert_eq!(back, samples);
        }
    }

    #[test]
    fn header_layout() {
        let s = LabeledSample {
            configuration: Configuration::new(vec![1.0, 2.0]),
            energy: 3.0,
            forces: vec![4.0, 5.0],
        };
        let text = dataset_to_csv(&[s]);
        assert!(text.starts_with("x1,x2,energy,f1,f2\n"));
        assert!(parse_dataset("x1,energy\n1,2,3\n", Path::new("mem")).is_err());
    }
}
