//! Long-format dataset CSV, atomic file output, and the dataset digest.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use lfda::model::{FunctionalDataset, SubjectRecord};
use nalgebra::{DMatrix, DVector};
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

/// Write `bytes` to a sibling temporary file, then rename it over `path`.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = dir.join(format!(".{name}.tmp{}", std::process::id()));
    let write = || -> std::io::Result<()> {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    };
    write().map_err(|e| {
        let _ = fs::remove_file(&tmp);
        CliError::io(path, e)
    })
}

/// Serialize rows with a header into CSV bytes.
pub fn csv_bytes<S: AsRef<str>>(header: &[S], rows: impl IntoIterator<Item = Vec<String>>) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header.iter().map(|h| h.as_ref()))?;
    for row in rows {
        w.write_record(&row)?;
    }
    w.into_inner().map_err(|e| CliError::Container(e.to_string()))
}

pub fn write_csv<S: AsRef<str>>(path: &Path, header: &[S], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
    atomic_write(path, &csv_bytes(header, rows)?)
}

/// Shortest representation that parses back to the same `f64`.
pub fn fmt(v: f64) -> String {
    format!("{v}")
}

fn format_err(path: &Path, line: u64, message: impl Into<String>) -> CliError {
    CliError::Format {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

fn sorted_unique(mut v: Vec<f64>) -> Vec<f64> {
    v.sort_by(f64::total_cmp);
    v.dedup();
    v
}

/// Read a long-format CSV with header `subject,s,t,value[,x1..xd]`.
///
/// The grids are the union of the `s` and `t` values; cells absent for a
/// subject (or with value `NA`) are marked missing.
pub fn load_dataset(path: &Path) -> Result<FunctionalDataset> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    parse_dataset(path, &bytes)
}

pub fn parse_dataset(path: &Path, bytes: &[u8]) -> Result<FunctionalDataset> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(bytes);
    let header = rdr.headers().map_err(|e| format_err(path, 1, e.to_string()))?.clone();
    let expected = ["subject", "s", "t", "value"];
    if header.len() < 4 || header.iter().take(4).ne(expected) {
        return Err(format_err(path, 1, "header must start with subject,s,t,value"));
    }
    let d = header.len() - 4;
    for (j, h) in header.iter().skip(4).enumerate() {
        if h != format!("x{}", j + 1) {
            return Err(format_err(path, 1, format!("covariate column {} must be named x{}", j + 5, j + 1)));
        }
    }

    struct Row {
        line: u64,
        subject: usize,
        s: f64,
        t: f64,
        value: Option<f64>,
    }
    let mut ids: Vec<String> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut covariates: Vec<Vec<f64>> = Vec::new();
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            format_err(path, line, e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        let num = |k: usize, name: &str| -> Result<f64> {
            let v: f64 = rec[k]
                .parse()
                .map_err(|_| format_err(path, line, format!("{name} field {:?} is not a number", &rec[k])))?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(format_err(path, line, format!("{name} field must be finite")))
            }
        };
        let s = num(1, "s")?;
        let t = num(2, "t")?;
        let value = match &rec[3] {
            "NA" | "" => None,
            _ => Some(num(3, "value")?),
        };
        let x = (0..d).map(|j| num(4 + j, &format!("x{}", j + 1))).collect::<Result<Vec<_>>>()?;
        let id = rec[0].to_string();
        if id.is_empty() {
            return Err(format_err(path, line, "empty subject id"));
        }
        let subject = match index.get(&id) {
            Some(&i) => {
                if covariates[i] != x {
                    return Err(format_err(path, line, format!("covariates of subject {id} vary between rows")));
                }
                i
            }
            None => {
                index.insert(id.clone(), ids.len());
                ids.push(id);
                covariates.push(x);
                ids.len() - 1
            }
        };
        rows.push(Row { line, subject, s, t, value });
    }
    if rows.is_empty() {
        return Err(format_err(path, 1, "no data rows"));
    }

    let s_grid = sorted_unique(rows.iter().map(|r| r.s).collect());
    let t_grid = sorted_unique(rows.iter().map(|r| r.t).collect());
    let pos = |grid: &[f64], v: f64| grid.binary_search_by(|g| g.total_cmp(&v)).expect("value is on its grid");
    let (ns, nt) = (s_grid.len(), t_grid.len());
    let mut ys = vec![DMatrix::zeros(ns, nt); ids.len()];
    let mut masks = vec![DMatrix::from_element(ns, nt, false); ids.len()];
    let mut seen = vec![DMatrix::from_element(ns, nt, false); ids.len()];
    for r in &rows {
        let (j, k) = (pos(&s_grid, r.s), pos(&t_grid, r.t));
        if seen[r.subject][(j, k)] {
            return Err(format_err(
                path,
                r.line,
                format!("duplicate cell (subject {}, s {}, t {})", ids[r.subject], r.s, r.t),
            ));
        }
        seen[r.subject][(j, k)] = true;
        if let Some(v) = r.value {
            ys[r.subject][(j, k)] = v;
            masks[r.subject][(j, k)] = true;
        }
    }
    let subjects = ids
        .into_iter()
        .zip(ys)
        .zip(masks)
        .zip(covariates)
        .map(|(((id, y), mask), x)| SubjectRecord {
            id,
            y,
            mask,
            x: DVector::from_vec(x),
        })
        .collect();
    Ok(FunctionalDataset::new(subjects, s_grid, t_grid, d)?)
}

/// Canonical long-format CSV: subjects in dataset order, `s` varying
/// fastest, observed cells only.
pub fn dataset_bytes(data: &FunctionalDataset) -> Result<Vec<u8>> {
    let mut header = vec!["subject".to_string(), "s".into(), "t".into(), "value".into()];
    header.extend((1..=data.d).map(|j| format!("x{j}")));
    let mut rows = Vec::with_capacity(data.n_observed());
    for subj in &data.subjects {
        for (k, &t) in data.t_grid.iter().enumerate() {
            for (j, &s) in data.s_grid.iter().enumerate() {
                if !subj.mask[(j, k)] {
                    continue;
                }
                let mut row = vec![subj.id.clone(), fmt(s), fmt(t), fmt(subj.y[(j, k)])];
                row.extend(subj.x.iter().map(|&v| fmt(v)));
                rows.push(row);
            }
        }
    }
    csv_bytes(&header, rows)
}

pub fn save_dataset(path: &Path, data: &FunctionalDataset) -> Result<()> {
    atomic_write(path, &dataset_bytes(data)?)
}

/// SHA-256 of the canonical serialization, so formatting differences in the
/// input file do not change the digest.
pub fn dataset_digest(data: &FunctionalDataset) -> Result<[u8; 32]> {
    Ok(Sha256::digest(dataset_bytes(data)?).into())
}
